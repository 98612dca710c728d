//! Independent brute-force reference implementations.

#![allow(dead_code)]

use std::cmp::Ordering;

use celltissue::dataio::Rect;
use celltissue::CellPoint;

/// Local maxima by direct definition: scan the full window of every pixel,
/// flood-fill plateaus, then accept greedily with an O(n²) distance check.
pub fn peaks(plane: &[f64], h: usize, w: usize, min_distance: usize, threshold: f64) -> Vec<(usize, usize)> {
    let r = min_distance.max(1) as i64;
    let at = |y: i64, x: i64| plane[y as usize * w + x as usize];
    let mut cand = vec![false; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let v = at(y, x);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                    if at(yy, xx) > v {
                        is_max = false;
                    }
                }
            }
            cand[y as usize * w + x as usize] = is_max;
        }
    }

    let mut seen = vec![false; h * w];
    let mut reps: Vec<(f64, usize, usize)> = Vec::new();
    for start in 0..h * w {
        if !cand[start] || seen[start] {
            continue;
        }
        let v = plane[start];
        let mut stack = vec![start];
        let mut members = Vec::new();
        seen[start] = true;
        while let Some(i) = stack.pop() {
            members.push(i);
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    if cand[j] && !seen[j] && plane[j] == v {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        let n = members.len() as f64;
        let cy = members.iter().map(|&i| (i / w) as f64).sum::<f64>() / n;
        let cx = members.iter().map(|&i| (i % w) as f64).sum::<f64>() / n;
        let best = members
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let d = |i: usize| ((i / w) as f64 - cy).powi(2) + ((i % w) as f64 - cx).powi(2);
                d(a).total_cmp(&d(b)).then(a.cmp(&b))
            })
            .unwrap();
        reps.push((v, best / w, best % w));
    }
    reps.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut accepted: Vec<(usize, usize)> = Vec::new();
    for (_, y, x) in reps {
        let blocked = accepted
            .iter()
            .any(|&(ay, ax)| (ay as i64 - y as i64).abs().max((ax as i64 - x as i64).abs()) <= r);
        if !blocked {
            accepted.push((y, x));
        }
    }
    accepted
}

/// Per-class (tp, fp, fn) indexed by class id 0..=max.
pub type Counts = Vec<[usize; 3]>;

fn priority(dets: &[CellPoint]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (&dets[a], &dets[b]);
        q.confidence
            .total_cmp(&p.confidence)
            .then(p.y.total_cmp(&q.y))
            .then(p.x.total_cmp(&q.x))
            .then(a.cmp(&b))
    });
    idx
}

fn lex_less(a: &[(f64, usize)], b: &[(f64, usize)]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    a.len() < b.len()
}

struct Search<'a> {
    dets: &'a [CellPoint],
    gts: &'a [CellPoint],
    order: Vec<usize>,
    radius: f64,
    best: Option<(Vec<(f64, usize)>, Vec<Option<usize>>)>,
}

impl Search<'_> {
    fn go(&mut self, k: usize, consumed: &mut Vec<bool>, key: &mut Vec<(f64, usize)>, claim: &mut Vec<Option<usize>>) {
        if k == self.order.len() {
            if self.best.as_ref().is_none_or(|(b, _)| lex_less(key, b)) {
                self.best = Some((key.clone(), claim.clone()));
            }
            return;
        }
        let d = &self.dets[self.order[k]];
        let free: Vec<usize> = (0..self.gts.len()).filter(|&j| !consumed[j]).collect();
        if free.is_empty() {
            key.push((f64::INFINITY, usize::MAX));
            claim.push(None);
            self.go(k + 1, consumed, key, claim);
            key.pop();
            claim.pop();
            return;
        }
        for j in free {
            let g = &self.gts[j];
            let dist = ((d.x - g.x).powi(2) + (d.y - g.y).powi(2)).sqrt();
            let hit = dist <= self.radius && g.class_id == d.class_id;
            key.push((dist, j));
            claim.push(hit.then_some(j));
            consumed[j] = hit;
            self.go(k + 1, consumed, key, claim);
            consumed[j] = false;
            key.pop();
            claim.pop();
        }
    }
}

/// Exhaustive confidence-priority matching: every detection, taken in
/// priority order, claims some still-unconsumed GT; a claim consumes the GT
/// only when it is within the radius and of the same class. Among all claim
/// sequences the lexicographically smallest `(distance, gt index)` sequence
/// is the matching.
pub fn matching(dets: &[CellPoint], gts: &[CellPoint], radius: f64, classes: usize) -> Counts {
    let order = priority(dets);
    let mut s = Search { dets, gts, order: order.clone(), radius, best: None };
    s.go(0, &mut vec![false; gts.len()], &mut Vec::new(), &mut Vec::new());
    let (_, claims) = s.best.unwrap_or_default();
    let mut counts = vec![[0usize; 3]; classes + 1];
    let mut used = vec![false; gts.len()];
    for (k, &i) in order.iter().enumerate() {
        let c = dets[i].class_id as usize;
        match claims.get(k).copied().flatten() {
            Some(j) => {
                used[j] = true;
                counts[c][0] += 1;
            }
            None => counts[c][1] += 1,
        }
    }
    for (g, u) in gts.iter().zip(used) {
        if !u {
            counts[g.class_id as usize][2] += 1;
        }
    }
    counts
}

/// Bilinear sample of a `side × side` window at output pixel `(i, j)` with
/// upsampling factor `f`, pixel-centre convention, edges clamped to the window.
pub fn bilinear(window: &dyn Fn(usize, usize) -> f64, side: usize, f: usize, i: usize, j: usize) -> f64 {
    let src = |o: usize| ((o as f64 + 0.5) / f as f64 - 0.5).max(0.0).min((side - 1) as f64);
    let (sy, sx) = (src(i), src(j));
    let (y0, x0) = (sy.floor(), sx.floor());
    let (ty, tx) = (sy - y0, sx - x0);
    let (y0, x0) = (y0 as usize, x0 as usize);
    let (y1, x1) = ((y0 + 1).min(side - 1), (x0 + 1).min(side - 1));
    window(y0, x0) * (1.0 - ty) * (1.0 - tx)
        + window(y0, x1) * (1.0 - ty) * tx
        + window(y1, x0) * ty * (1.0 - tx)
        + window(y1, x1) * ty * tx
}

/// Integer offsets `(dy, dx)` within Euclidean radius `r` of the origin.
pub fn disk_size(r: usize) -> usize {
    let r = r as i64;
    let mut n = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                n += 1;
            }
        }
    }
    n
}

/// Every tissue window on the region's stride grid that contains the cell
/// patch, in row-major order of its top-left corner.
pub fn tiger_windows(region: &Rect, cell: &Rect, cell_side: usize, tissue_side: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if region.height < tissue_side || region.width < tissue_side {
        return out;
    }
    let mut t = region.top;
    while t + tissue_side <= region.top + region.height {
        let mut l = region.left;
        while l + tissue_side <= region.left + region.width {
            let inside = t <= cell.top
                && l <= cell.left
                && cell.top + cell.height <= t + tissue_side
                && cell.left + cell.width <= l + tissue_side;
            if inside {
                out.push((t, l));
            }
            l += cell_side;
        }
        t += cell_side;
    }
    out
}

/// Welch two-sided p-values computed with scipy.stats.ttest_ind(equal_var=False).
pub const WELCH_SCIPY: [(&[f64], &[f64], f64); 20] = [
    (&[60.192, 62.223, 60.458, 62.591, 68.739, 55.564, 62.836], &[64.777, 67.873, 64.19, 66.517, 63.507, 62.0, 66.374], 8.565902582434901e-02),
    (&[61.56, 56.994, 60.805, 62.302, 63.574, 56.528], &[60.296, 60.428, 58.422, 58.592, 64.246, 61.139, 58.995], 9.951752658019217e-01),
    (&[57.37, 58.483, 56.151, 56.009, 62.478, 59.258], &[63.225, 70.147, 57.319, 72.473, 62.306, 56.317, 67.202], 4.896064395331123e-02),
    (&[59.335, 61.946, 59.046], &[65.861, 60.354, 70.857, 60.83, 65.736, 64.817], 3.871922492925896e-02),
    (&[60.607, 59.509, 62.511, 57.863, 56.478, 61.426], &[66.784, 65.84, 66.707, 66.394, 66.162, 66.38, 65.445], 7.082155565503321e-04),
    (&[55.288, 54.66, 62.757, 59.553, 63.017], &[69.202, 62.997, 58.066, 57.456, 64.124], 2.705741803914281e-01),
    (&[64.574, 61.964, 56.035], &[65.91, 66.245], 1.742544364913128e-01),
    (&[58.526, 66.762, 60.485, 62.501, 55.26], &[61.1, 63.532, 63.191], 4.004137228164130e-01),
    (&[62.147, 58.337], &[59.892, 57.67, 64.224, 65.357, 62.456, 52.143, 61.958], 9.179337021251815e-01),
    (&[61.314, 60.475, 56.728, 56.041, 62.516, 66.359], &[63.189, 64.001], 1.138592223517677e-01),
    (&[60.248, 60.571], &[60.913, 68.704, 62.204, 63.765, 66.973, 63.429, 64.412], 8.035304667168888e-03),
    (&[59.253, 65.743, 61.172, 63.072, 61.179, 65.646, 57.755], &[57.161, 56.82, 56.805], 4.491076743321144e-03),
    (&[63.106, 60.109, 61.496, 58.566], &[61.288, 58.857, 59.414], 4.631938880933271e-01),
    (&[57.532, 60.378, 57.481, 60.365], &[60.49, 59.868, 60.179, 58.757, 58.731], 5.006880813315633e-01),
    (&[66.376, 58.851], &[68.789, 64.137, 64.34, 64.219, 58.16, 68.275], 6.852615856864326e-01),
    (&[66.636, 64.041, 60.569, 51.81, 60.11], &[61.424, 72.428, 67.114], 1.848402279231213e-01),
    (&[66.432, 61.191, 60.478, 61.163, 63.644, 60.939, 60.659], &[60.436, 55.064, 57.246, 58.298, 64.195, 64.552], 2.692721731548157e-01),
    (&[60.002, 59.116, 55.696, 56.697, 56.066], &[56.147, 55.913, 56.723, 55.605, 54.875], 1.284874022036361e-01),
    (&[60.97, 56.746, 55.698, 57.896], &[60.789, 61.036, 61.472], 6.190753926281710e-02),
    (&[61.669, 61.312, 55.136, 59.266, 56.726], &[63.932, 62.987, 62.562, 64.747, 61.479], 2.363352044973063e-02),
];
