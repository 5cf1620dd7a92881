use alloc::collections::VecDeque;

/// Best `(s, e)` with `s <= e < len` and `e - s + 1 <= max_len`, maximizing
/// `start[s] + end[e]` (log-probabilities, so the probability product).
/// Ties go to the smaller `e`, then the smaller `s`. Linear time: a
/// monotone deque keeps the window maximum of `start` over `[e - A + 1, e]`.
pub fn best_span(start: &[f64], end: &[f64], len: usize, max_len: usize) -> Option<(usize, usize)> {
    let len = len.min(start.len()).min(end.len());
    if len == 0 || max_len == 0 {
        return None;
    }
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut best: Option<(f64, usize, usize)> = None;
    for e in 0..len {
        // Equal values keep the earlier index in front.
        while window.back().is_some_and(|&k| start[k] < start[e]) {
            window.pop_back();
        }
        window.push_back(e);
        while window.front().is_some_and(|&k| k + max_len <= e) {
            window.pop_front();
        }
        let s = *window.front().expect("window holds e");
        let score = start[s] + end[e];
        if best.is_none_or(|(b, _, _)| score > b) {
            best = Some((score, s, e));
        }
    }
    best.map(|(_, s, e)| (s, e))
}

/// Exhaustive search with the same tie rule as [`best_span`].
pub fn best_span_exhaustive(start: &[f64], end: &[f64], len: usize, max_len: usize) -> Option<(usize, usize)> {
    let len = len.min(start.len()).min(end.len());
    let mut best: Option<(f64, usize, usize)> = None;
    for e in 0..len {
        for s in (e + 1).saturating_sub(max_len)..=e {
            let score = start[s] + end[e];
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, s, e));
            }
        }
    }
    best.map(|(_, s, e)| (s, e))
}
