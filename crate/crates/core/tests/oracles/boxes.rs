//! Plain-array box overlap, suppression and matching.

use rand::Rng;

/// `[left, top, width, height]`, half-open.
pub type Rect = [f64; 4];

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let w = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let h = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

pub fn random_rect(rng: &mut impl Rng, extent: f64) -> Rect {
    [rng.gen_range(0.0..extent), rng.gen_range(0.0..extent), rng.gen_range(1.0..extent / 2.0), rng.gen_range(1.0..extent / 2.0)]
}

/// `true` when `i` outranks `j`: higher score, or equal score and earlier.
fn outranks(scores: &[f64], i: usize, j: usize) -> bool {
    scores[i] > scores[j] || (scores[i] == scores[j] && i < j)
}

/// Keep set by exhaustive pairwise re-checking: box `i` is kept iff no kept
/// box that outranks it overlaps it by more than `threshold`. Resolved one
/// rank at a time from the full pairwise table. Returned in index order.
pub fn nms_reference(rects: &[Rect], scores: &[f64], threshold: f64) -> Vec<usize> {
    let n = rects.len();
    let over: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| iou(&rects[i], &rects[j]) > threshold).collect()).collect();
    let rank = |i: usize| (0..n).filter(|&j| outranks(scores, j, i)).count();
    let mut by_rank = vec![0; n];
    for i in 0..n {
        by_rank[rank(i)] = i;
    }
    let mut kept = vec![false; n];
    for &i in &by_rank {
        kept[i] = !(0..n).any(|j| kept[j] && outranks(scores, j, i) && over[j][i]);
    }
    (0..n).filter(|&i| kept[i]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Tp,
    Fp,
    Ignored,
}

/// Greedy matching written over the full overlap matrix: detections in
/// rank order, each taking the free regular annotation of highest overlap
/// (lowest index on ties), else any ignore region, else nothing.
pub fn match_reference(dets: &[Rect], scores: &[f64], annos: &[Rect], ignore: &[bool], overlap: f64) -> Vec<Label> {
    let n = dets.len();
    let table: Vec<Vec<f64>> = dets.iter().map(|d| annos.iter().map(|a| iou(d, a)).collect()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| if outranks(scores, a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
    let mut taken = vec![false; annos.len()];
    let mut labels = vec![Label::Fp; n];
    for d in order {
        let candidates: Vec<usize> = (0..annos.len()).filter(|&a| !ignore[a] && !taken[a] && table[d][a] >= overlap).collect();
        let best = candidates.iter().copied().fold(None, |acc: Option<usize>, a| match acc {
            Some(b) if table[d][b] >= table[d][a] => Some(b),
            _ => Some(a),
        });
        if let Some(a) = best {
            taken[a] = true;
            labels[d] = Label::Tp;
        } else if (0..annos.len()).any(|a| ignore[a] && table[d][a] >= overlap) {
            labels[d] = Label::Ignored;
        }
    }
    labels
}
