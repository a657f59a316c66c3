//! The gain recursion and its settling time, written out from scratch.

/// The gain recursion written out from scratch: (mean, variance) in,
/// (mean, variance) out.
pub fn oracle_step((m, v): (f64, f64), s: f64, alpha: f64, beta: f64, vartheta: f64, gamma: f64) -> (f64, f64) {
    let ht = -beta / alpha;
    let rt = -beta / (alpha - 1.0);
    let loss = |x: f64| {
        if x < ht {
            0.0
        } else if x >= rt {
            x
        } else {
            alpha * x + beta
        }
    };
    let a = if s < beta / (1.0 - alpha) { alpha } else { 1.0 };
    let vu = 1.0 / gamma + v;
    let k = a * vu / (vartheta + a * a * vu);
    (m + k * (s - loss(s + m)), (1.0 - k * a) * vu)
}

pub fn oracle_settling(from: f64, to: f64) -> usize {
    let run = |s: f64, mut st: (f64, f64), n: usize| {
        let mut trace = Vec::with_capacity(n);
        for _ in 0..n {
            st = oracle_step(st, s, 2.0, -90.0, 10.0, 1.0);
            trace.push(st);
        }
        trace
    };
    let start = *run(from, (0.0, 1e4), 5000).last().unwrap();
    let trace = run(to, start, 5000);
    let target = trace.last().unwrap().0;
    // Last step outside the 2 dB band, plus one.
    trace.iter().rposition(|st| (st.0 - target).abs() > 2.0).map_or(1, |i| i + 2)
}
