//! Warm-started parameter continuation with sub-stepping on failure.

use log::warn;

use crate::error::Result;

/// Solves at `target`, starting from `warm`. When that fails and a previous
/// parameter value `start` is known, retries by walking from `start` to
/// `target` in 2, 4, ... equal steps (geometric ones when `geometric`), up to
/// `2^max_doublings`. Returns the solution and the number of steps used
/// (0 for the direct solve). The first error is returned if nothing works.
pub(crate) fn continue_to<T, W: Clone>(
    start: Option<f64>,
    target: f64,
    warm: Option<W>,
    geometric: bool,
    max_doublings: usize,
    mut solve: impl FnMut(f64, Option<W>) -> Result<T>,
    warm_of: impl Fn(&T) -> W,
) -> Result<(T, usize)> {
    let err = match solve(target, warm.clone()) {
        Ok(t) => return Ok((t, 0)),
        Err(e) => e,
    };
    let Some(start) = start else {
        return Err(err);
    };
    for depth in 1..=max_doublings {
        let k = 1usize << depth;
        warn!("value {target}: retrying with {k} continuation steps from {start}");
        let mut w = warm.clone();
        let mut reached = None;
        for step in 1..=k {
            let t = step as f64 / k as f64;
            let p = if step == k {
                target
            } else if geometric {
                start * (target / start).powf(t)
            } else {
                start + t * (target - start)
            };
            match solve(p, w.clone()) {
                Ok(sol) => {
                    w = Some(warm_of(&sol));
                    if step == k {
                        reached = Some(sol);
                    }
                }
                Err(_) => break,
            }
        }
        if let Some(sol) = reached {
            return Ok((sol, k));
        }
    }
    Err(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    // "solver" that only succeeds when warm-started within 0.3 of the target
    fn picky(p: f64, w: Option<f64>) -> Result<f64> {
        match w {
            Some(w) if (w - p).abs() <= 0.3 => Ok(p),
            _ => Err(Error::Refused(format!("too far from {p}"))),
        }
    }

    #[test]
    fn direct_solve_uses_no_substeps() {
        let (v, k) = continue_to(Some(0.0), 0.2, Some(0.0), false, 3, picky, |s| *s).unwrap();
        assert_eq!((v, k), (0.2, 0));
    }

    #[test]
    fn substeps_bridge_large_jumps() {
        let (v, k) = continue_to(Some(0.0), 1.0, Some(0.0), false, 3, picky, |s| *s).unwrap();
        assert_eq!((v, k), (1.0, 4));
    }

    #[test]
    fn gives_up_with_first_error() {
        let err = continue_to(Some(0.0), 10.0, Some(0.0), false, 2, picky, |s| *s).unwrap_err();
        assert!(err.to_string().contains("too far from 10"));
        assert!(continue_to(None, 1.0, Some(0.0), false, 3, picky, |s| *s).is_err());
    }

    #[test]
    fn geometric_steps_stay_positive() {
        let mut seen = Vec::new();
        let _ = continue_to(
            Some(0.1),
            0.001,
            None::<f64>,
            true,
            2,
            |p, _| {
                seen.push(p);
                Err::<f64, _>(Error::Refused("no".into()))
            },
            |s| *s,
        );
        assert!(seen.iter().all(|p| *p > 0.0));
        assert!((seen[1] - 0.01).abs() < 1e-15);
    }
}
