/// `a` weakly dominates `b` in both coordinates and strictly in one (larger
/// is better).
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 >= b.1 && (a.0 > b.0 || a.1 > b.1)
}

/// Indices of the non-dominated points, in their original order.
///
/// Sorts by the first coordinate and sweeps, so duplicates are all kept.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i], points[j]);
        b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1))
    });
    let mut keep = vec![false; points.len()];
    // Best second coordinate among points with a strictly larger first one.
    let mut best_y = f64::NEG_INFINITY;
    let mut g = 0;
    while g < order.len() {
        let x = points[order[g]].0;
        let mut end = g;
        while end < order.len() && points[order[end]].0 == x {
            end += 1;
        }
        // Within a group of equal x only the largest y survives.
        let top = points[order[g]].1;
        for &i in &order[g..end] {
            let y = points[i].1;
            keep[i] = y == top && y > best_y;
        }
        best_y = best_y.max(top);
        g = end;
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

/// Fraction of the union of two index sets that lies in both.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|i| b.contains(i)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
