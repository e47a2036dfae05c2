use super::config::{BucketConfig, VioConfig};
use crate::tracks::FeatureTriple;

/// Keeps at most `max_features` triples spread over a `columns x rows` grid
/// on the newest image.
///
/// Cells are visited round-robin; each visit takes the strongest remaining
/// triple of the cell, strength being track age (ties broken by id).
/// Triples whose newest pixel is outside the image are discarded.
pub fn bucket(features: &[FeatureTriple], cfg: &VioConfig) -> Vec<FeatureTriple> {
    bucket_with(features, &cfg.buckets, cfg.image_width, cfg.image_height)
}

pub fn bucket_with(
    features: &[FeatureTriple],
    grid: &BucketConfig,
    width: f64,
    height: f64,
) -> Vec<FeatureTriple> {
    let cells = grid.columns * grid.rows;
    let mut bins: Vec<Vec<&FeatureTriple>> = vec![Vec::new(); cells];
    for f in features {
        let (u, v) = (f.f1.x, f.f1.y);
        if !(u >= 0.0 && v >= 0.0 && u < width && v < height) {
            continue;
        }
        let c = ((u / width * grid.columns as f64) as usize).min(grid.columns - 1);
        let r = ((v / height * grid.rows as f64) as usize).min(grid.rows - 1);
        bins[r * grid.columns + c].push(f);
    }
    for b in &mut bins {
        b.sort_by(|a, b| b.age.cmp(&a.age).then(a.track_id.cmp(&b.track_id)));
    }
    let mut out = Vec::new();
    let mut depth = 0;
    while out.len() < grid.max_features {
        let mut took = false;
        for b in &bins {
            if let Some(f) = b.get(depth) {
                out.push(**f);
                took = true;
                if out.len() == grid.max_features {
                    break;
                }
            }
        }
        if !took {
            break;
        }
        depth += 1;
    }
    out.sort_by_key(|f| f.track_id);
    out
}
