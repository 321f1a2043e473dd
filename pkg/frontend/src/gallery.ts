/**
 * Candidate gallery view models. Thin: order and scores come straight from
 * the retrieval response, no client-side re-ranking.
 */

import { Candidate } from "./api.js";

export interface GalleryItem {
  componentId: number;
  label: string;
  scoreText: string;
  thumbnailUrl: string;
  rank: number;
}

export function buildGallery(candidates: Candidate[]): GalleryItem[] {
  return candidates.map((candidate, rank) => ({
    componentId: candidate.component_id,
    label: `${candidate.name} (${candidate.category})`,
    scoreText: candidate.score.toFixed(3),
    thumbnailUrl: `data:image/png;base64,${candidate.thumbnail_png_base64}`,
    rank,
  }));
}
