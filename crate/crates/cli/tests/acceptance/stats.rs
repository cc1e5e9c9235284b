use editbench_core::stats::{krcc, srcc, PairedSeries, StatsError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Verdict};

/// Tau-b from every pair; `None` when one side has no untied pair.
fn brute_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            tx += (dx == 0.0) as i64;
            ty += (dy == 0.0) as i64;
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tx) as f64) * ((n0 - ty) as f64);
    (denom > 0.0).then(|| (c - d) as f64 / denom.sqrt())
}

fn check_krcc(x: &[f64], y: &[f64]) -> Result<(), String> {
    let got = PairedSeries::new(x.to_vec(), y.to_vec()).and_then(|s| krcc(&s));
    match (brute_tau_b(x, y), got) {
        (Some(want), Ok(got)) => {
            ensure!((want - got).abs() < 1e-12, "krcc {x:?} {y:?}: {got} vs {want}");
        }
        (None, Err(StatsError::DegenerateSeries)) => {}
        (want, got) => return Err(format!("krcc {x:?} {y:?}: oracle {want:?}, got {got:?}")),
    }
    Ok(())
}

fn digits(mut code: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = code % 3;
            code /= 3;
            v as f64 + 1.0
        })
        .collect()
}

fn multisets(n: usize, start: usize, prefix: &mut Vec<usize>, out: &mut dyn FnMut(&[usize]) -> Result<(), String>) -> Result<(), String> {
    if prefix.len() == n {
        return out(prefix);
    }
    for s in start..9 {
        prefix.push(s);
        multisets(n, s, prefix, out)?;
        prefix.pop();
    }
    Ok(())
}

/// Lengths 2..=6: every ordered pair of series over {1,2,3}. Lengths 7 and 8:
/// every multiset of (x, y) pairs, in sorted and reversed order. Tau-b is a
/// function of the pair multiset and the implementation sorts the pairs
/// before counting, so this covers every series of those lengths.
fn krcc_enumeration() -> Result<usize, String> {
    let mut checked = 0;
    for n in 2..=6 {
        let per_side = 3usize.pow(n as u32);
        for cx in 0..per_side {
            let x = digits(cx, n);
            for cy in 0..per_side {
                check_krcc(&x, &digits(cy, n))?;
                checked += 1;
            }
        }
    }
    for n in 7..=8 {
        multisets(n, 0, &mut Vec::new(), &mut |pairs| {
            let x: Vec<f64> = pairs.iter().map(|p| (p / 3) as f64 + 1.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| (p % 3) as f64 + 1.0).collect();
            check_krcc(&x, &y)?;
            let xr: Vec<f64> = x.iter().rev().copied().collect();
            let yr: Vec<f64> = y.iter().rev().copied().collect();
            check_krcc(&xr, &yr)?;
            checked += 2;
            Ok(())
        })?;
    }
    Ok(checked)
}

fn srcc_closed_form(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let trials = 1000;
    for _ in 0..trials {
        let n = rng.random_range(3..60);
        let mut rx: Vec<usize> = (1..=n).collect();
        let mut ry = rx.clone();
        rx.shuffle(rng);
        ry.shuffle(rng);
        // Distinct values with the given ranks.
        let x: Vec<f64> = rx.iter().map(|&r| r as f64 * 1.7 + rng.random_range(0.0..0.5)).collect();
        let y: Vec<f64> = ry.iter().map(|&r| (r as f64).powi(2) - 3.0).collect();
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
        let nf = n as f64;
        let want = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        let got = srcc(&PairedSeries::new(x, y).unwrap()).map_err(|e| e.to_string())?;
        ensure!((got - want).abs() <= 1e-12, "n={n}: srcc {got} vs closed form {want}");
    }
    Ok(trials)
}

fn monotone_invariance(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let trials = 1000;
    let transforms: [fn(f64) -> f64; 4] = [|v| (v / 10.0).exp(), |v| v * v * v + v, |v| 2.5 * v - 7.0, |v| (v + 101.0).ln()];
    for t in 0..trials {
        let n = rng.random_range(3..40);
        // Small alphabet half the time so ties are common.
        let levels = if t % 2 == 0 { 5 } else { 1000 };
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 - 50.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let f = transforms[t % 4];
        let g = transforms[(t / 4) % 4];
        let fx: Vec<f64> = x.iter().map(|v| f(*v)).collect();
        let gy: Vec<f64> = y.iter().map(|v| g(*v)).collect();
        let base = PairedSeries::new(x.clone(), y.clone()).unwrap();
        let moved = PairedSeries::new(fx, gy).unwrap();
        match (srcc(&base), srcc(&moved)) {
            (Ok(a), Ok(b)) => ensure!((a - b).abs() <= 1e-12, "srcc changed under monotone map: {a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => return Err(format!("srcc definedness changed: {a:?} vs {b:?}")),
        }
        match (krcc(&base), krcc(&moved)) {
            (Ok(a), Ok(b)) => ensure!((a - b).abs() <= 1e-12, "krcc changed under monotone map: {a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => return Err(format!("krcc definedness changed: {a:?} vs {b:?}")),
        }
    }
    Ok(trials)
}

pub fn kernel_oracles() -> Verdict {
    let pairs = krcc_enumeration()?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let closed = srcc_closed_form(&mut rng)?;
    let monotone = monotone_invariance(&mut rng)?;
    Ok(format!(
        "krcc = brute force on {pairs} series pairs (length 2..8 over {{1,2,3}}); srcc = closed form on {closed} tie-free series; {monotone} monotone-map trials"
    ))
}
