//! Brute-force agglomerative clustering: every step rescans all region pairs.

/// Partitions (sorted patch lists, ordered by smallest patch) recorded at each
/// threshold, for a row-major `[h][w][dim]` feature grid.
pub fn cluster(h: usize, w: usize, dim: usize, data: &[f32], thresholds: &[f64], eight: bool) -> Vec<Vec<Vec<usize>>> {
    let n = h * w;
    // label[p] = id of the region holding patch p; ids are smallest members
    let mut label: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    let mut next = 0;

    let touching = |p: usize, q: usize| {
        let (pr, pc) = ((p / w) as i64, (p % w) as i64);
        let (qr, qc) = ((q / w) as i64, (q % w) as i64);
        let (dr, dc) = ((pr - qr).abs(), (pc - qc).abs());
        if eight {
            dr <= 1 && dc <= 1 && (dr, dc) != (0, 0)
        } else {
            dr + dc == 1
        }
    };

    let mean = |label: &[usize], id: usize| -> Vec<f64> {
        let members: Vec<usize> = (0..n).filter(|&p| label[p] == id).collect();
        let mut m = vec![0.0f64; dim];
        for &p in &members {
            for k in 0..dim {
                m[k] += f64::from(data[p * dim + k]);
            }
        }
        m.iter().map(|v| v / members.len() as f64).collect()
    };

    let cosine = |a: &[f64], b: &[f64]| -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    };

    let partition = |label: &[usize]| -> Vec<Vec<usize>> {
        let mut ids: Vec<usize> = label.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.iter().map(|&id| (0..n).filter(|&p| label[p] == id).collect()).collect()
    };

    while next < thresholds.len() {
        let mut ids: Vec<usize> = label.clone();
        ids.sort_unstable();
        ids.dedup();
        let means: Vec<(usize, Vec<f64>)> = ids.iter().map(|&id| (id, mean(&label, id))).collect();

        let mut adjacent = std::collections::HashSet::new();
        for p in 0..n {
            for q in 0..n {
                if label[p] != label[q] && touching(p, q) {
                    adjacent.insert((label[p].min(label[q]), label[p].max(label[q])));
                }
            }
        }

        let mut best: Option<(f64, usize, usize)> = None;
        for (i, (a, ma)) in means.iter().enumerate() {
            for (b, mb) in &means[i + 1..] {
                if !adjacent.contains(&(*a, *b)) {
                    continue;
                }
                let s = cosine(ma, mb);
                // ids ascend, so the first pair found wins a tie
                if best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, *a, *b));
                }
            }
        }
        let Some((s, a, b)) = best else { break };
        while next < thresholds.len() && s < thresholds[next] {
            out.push(partition(&label));
            next += 1;
        }
        if next == thresholds.len() {
            break;
        }
        for l in label.iter_mut() {
            if *l == b {
                *l = a;
            }
        }
    }
    while out.len() < thresholds.len() {
        out.push(partition(&label));
    }
    out
}
