use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

/// Maps `f` over `items` on up to `workers` threads and returns results in
/// input order. On the first error no further items are started; the
/// results gathered so far (in order, up to the first gap) are returned
/// alongside that error.
pub(crate) fn try_map_ordered<T, R, E, F>(
    items: &[T],
    workers: usize,
    f: F,
) -> Result<Vec<R>, (Vec<R>, E)>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match f(item) {
                Ok(r) => out.push(r),
                Err(e) => return Err((out, e)),
            }
        }
        return Ok(out);
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<R, E>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| {
                while !stop.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let r = f(&items[i]);
                    if r.is_err() {
                        stop.store(true, Ordering::Relaxed);
                    }
                    slots.lock().expect("slot lock poisoned")[i] = Some(r);
                }
            });
        }
    });

    let mut out = Vec::with_capacity(items.len());
    let mut first_err = None;
    let mut gap = false;
    for slot in slots.into_inner().expect("slot lock poisoned") {
        match slot {
            Some(Ok(r)) if !gap && first_err.is_none() => out.push(r),
            Some(Err(e)) if first_err.is_none() => first_err = Some(e),
            None => gap = true,
            _ => {}
        }
    }
    match first_err {
        Some(e) => Err((out, e)),
        None => Ok(out),
    }
}
