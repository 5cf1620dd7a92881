use std::sync::mpsc;
use std::thread;

/// Runs `iter` on a producer thread that stays at most `depth` items ahead
/// of `consume`. The consumer sees exactly the sequence `iter` yields;
/// `depth == 0` runs inline.
pub fn with_prefetch<I, R>(iter: I, depth: usize, consume: impl FnOnce(&mut dyn Iterator<Item = I::Item>) -> R) -> R
where
    I: Iterator + Send,
    I::Item: Send,
{
    if depth == 0 {
        let mut iter = iter;
        return consume(&mut iter);
    }
    thread::scope(|s| {
        let (tx, rx) = mpsc::sync_channel(depth);
        s.spawn(move || {
            for item in iter {
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        let mut items = rx.into_iter();
        consume(&mut items)
    })
}
