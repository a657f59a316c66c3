//! The three-factor toy model and its quadrature oracle.

use hlc_core::dist::GaussianMessage;
use hlc_core::ffg::{EdgeId, FactorKind, Graph, Message, NoiseParam, Rule, Schedule};

use super::{grid, normal_pdf};

fn gauss(m: f64, v: f64) -> Message {
    Message::Gaussian(GaussianMessage::new(m, v).unwrap())
}

fn point(v: f64) -> Message {
    Message::point(v).unwrap()
}

/// Parameters of the three-factor toy model
///
/// p(x1..x5) = f_a(x1, x2) f_b(x2, x3, x5) f_c(x4, x5)
///
/// with f_a = N(x1; m1, v1) N(x2; x1, va), f_b = N(x3; m3, v3) δ(x5 − x2 − x3)
/// and f_c = N(x4; m4, v4) N(x5; x4, vc).
#[derive(Debug, Clone, Copy)]
pub struct Toy {
    pub m1: f64,
    pub v1: f64,
    pub va: f64,
    pub m3: f64,
    pub v3: f64,
    pub m4: f64,
    pub v4: f64,
    pub vc: f64,
}

pub const TOY: Toy = Toy { m1: 1.0, v1: 2.0, va: 3.0, m3: -2.0, v3: 1.5, m4: 4.0, v4: 0.5, vc: 2.0 };

pub struct ToyGraph {
    pub graph: Graph,
    pub x: [EdgeId; 5],
    pub schedule: Schedule,
}

pub fn toy_graph(t: Toy) -> ToyGraph {
    let mut g = Graph::new();
    let x = [g.add_edge("x1"), g.add_edge("x2"), g.add_edge("x3"), g.add_edge("x4"), g.add_edge("x5")];
    let pa = g.add_edge("precision_a");
    let pc = g.add_edge("variance_c");
    g.add_node("x1_prior", FactorKind::Prior(gauss(t.m1, t.v1)), &[x[0]]).unwrap();
    g.add_node("x3_prior", FactorKind::Prior(gauss(t.m3, t.v3)), &[x[2]]).unwrap();
    g.add_node("x4_prior", FactorKind::Prior(gauss(t.m4, t.v4)), &[x[3]]).unwrap();
    g.add_node("pa", FactorKind::Clamp(point(1.0 / t.va)), &[pa]).unwrap();
    g.add_node("pc", FactorKind::Clamp(point(t.vc)), &[pc]).unwrap();
    let fa = g
        .add_node("f_a", FactorKind::GaussianNoise(NoiseParam::Precision), &[x[1], x[0], pa])
        .unwrap();
    let fb = g.add_node("f_b", FactorKind::Addition, &[x[1], x[2], x[4]]).unwrap();
    let fc = g
        .add_node("f_c", FactorKind::GaussianNoise(NoiseParam::Variance), &[x[4], x[3], pc])
        .unwrap();
    let sp = Rule::SumProduct;
    let mut s = Schedule::new();
    // Messages 1, 2 and 3 toward x5, then the return pass.
    s.push(fa, x[1], sp)
        .push(fb, x[4], sp)
        .push(fc, x[4], sp)
        .push(fc, x[3], sp)
        .push(fb, x[1], sp)
        .push(fb, x[2], sp)
        .push(fa, x[0], sp);
    ToyGraph { graph: g, x, schedule: s }
}

/// Mean and variance of every variable by brute-force trapezoid quadrature
/// of the joint density over (x1, x2, x3, x4), with x5 = x2 + x3. A first
/// pass over wide prior ranges locates the mass; the second integrates
/// ±10 sd around it.
pub fn toy_quadrature(t: Toy, n: usize) -> [(f64, f64); 5] {
    let wide = [
        (t.m1, t.v1),
        (t.m1, t.v1 + t.va),
        (t.m3, t.v3),
        (t.m4, t.v4),
    ]
    .map(|(m, v)| (m - 14.0 * v.sqrt(), m + 14.0 * v.sqrt()));
    let coarse = integrate(t, wide, n);
    let narrow = std::array::from_fn(|j| {
        let (m, v) = coarse[j];
        (m - 10.0 * v.sqrt(), m + 10.0 * v.sqrt())
    });
    integrate(t, narrow, n)
}

fn integrate(t: Toy, spans: [(f64, f64); 4], n: usize) -> [(f64, f64); 5] {
    let [g1, g2, g3, g4] = spans.map(|(lo, hi)| grid(lo, hi, n).0);
    let p1: Vec<f64> = g1.iter().map(|&x| normal_pdf(x, t.m1, t.v1)).collect();
    let p3: Vec<f64> = g3.iter().map(|&x| normal_pdf(x, t.m3, t.v3)).collect();
    let p4: Vec<f64> = g4.iter().map(|&x| normal_pdf(x, t.m4, t.v4)).collect();
    let mut z = 0.0;
    let mut s1 = [0.0; 5];
    let mut s2 = [0.0; 5];
    for (i1, &x1) in g1.iter().enumerate() {
        for &x2 in &g2 {
            let fa = p1[i1] * normal_pdf(x2, x1, t.va);
            for (i3, &x3) in g3.iter().enumerate() {
                let x5 = x2 + x3;
                let fab = fa * p3[i3];
                for (i4, &x4) in g4.iter().enumerate() {
                    let w = fab * p4[i4] * normal_pdf(x5, x4, t.vc);
                    z += w;
                    for (j, v) in [x1, x2, x3, x4, x5].into_iter().enumerate() {
                        s1[j] += w * v;
                        s2[j] += w * v * v;
                    }
                }
            }
        }
    }
    std::array::from_fn(|j| {
        let mean = s1[j] / z;
        (mean, s2[j] / z - mean * mean)
    })
}
