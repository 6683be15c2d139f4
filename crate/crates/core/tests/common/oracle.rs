//! Independent reference implementations used to check the library.

use fallchain::fingerprint::{Cell, OccupancyRaster};
use fallchain::vision::BBox;

/// Minimum path cost over every monotone path, summed from (0, 0) forward.
pub fn dtw_brute_force(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

pub fn overlap(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.cx + a.w / 2.0).min(b.cx + b.w / 2.0) - (a.cx - a.w / 2.0).max(b.cx - b.w / 2.0)).max(0.0);
    let iy = ((a.cy + a.h / 2.0).min(b.cy + b.h / 2.0) - (a.cy - a.h / 2.0).max(b.cy - b.h / 2.0)).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        0.0
    } else {
        inter / (a.w * a.h + b.w * b.h - inter)
    }
}

/// Precision/recall points after each ranked detection, then the area under
/// the right-to-left running maximum of precision.
pub fn oracle_ap(dets: &[(BBox, f64)], truths: &[BBox]) -> f64 {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap().then(a.cmp(&b)));
    let mut used = vec![false; truths.len()];
    let mut points = Vec::new();
    let mut tp = 0.0;
    for (rank, &d) in order.iter().enumerate() {
        let mut pick = None;
        let mut pick_iou = 0.5;
        for (t, truth) in truths.iter().enumerate() {
            let o = overlap(&dets[d].0, truth);
            if !used[t] && (o > pick_iou || (o == pick_iou && pick.is_none())) {
                pick = Some(t);
                pick_iou = o;
            }
        }
        if let Some(t) = pick {
            used[t] = true;
            tp += 1.0;
        }
        points.push((tp / truths.len() as f64, tp / (rank + 1) as f64));
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let (r, _) = points[k];
        if r > prev_recall {
            let best = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
            area += (r - prev_recall) * best;
            prev_recall = r;
        }
    }
    area
}

/// Uniform-cost search over the same move set, with costs kept exactly as
/// (straight, diagonal) counts and compared through their real value.
pub fn ucs_cost(map: &OccupancyRaster, start: (usize, usize), goal: (usize, usize)) -> Option<f64> {
    let (w, h) = (map.width as i64, map.height as i64);
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && map.cell(x as usize, y as usize) == Cell::Free;
    let mut best = vec![f64::INFINITY; map.width * map.height];
    let mut done = vec![false; map.width * map.height];
    best[start.1 * map.width + start.0] = 0.0;
    loop {
        let mut pick: Option<usize> = None;
        for i in 0..best.len() {
            if !done[i] && best[i].is_finite() && pick.is_none_or(|p| best[i] < best[p]) {
                pick = Some(i);
            }
        }
        let i = pick?;
        done[i] = true;
        let (x, y) = ((i % map.width) as i64, (i / map.width) as i64);
        if (x as usize, y as usize) == goal {
            return Some(best[i]);
        }
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                    continue;
                }
                if dx != 0 && dy != 0 && !(free(x + dx, y) && free(x, y + dy)) {
                    continue;
                }
                let step = if dx != 0 && dy != 0 { 2f64.sqrt() } else { 1.0 };
                let j = ((y + dy) * w + x + dx) as usize;
                if best[i] + step < best[j] {
                    best[j] = best[i] + step;
                }
            }
        }
    }
}
