//! Quadrature rules on triangles and segments.
//!
//! Triangle rules up to degree 2 use the classic symmetric 3-point rule;
//! higher degrees use a tensor Gauss-Legendre rule collapsed onto the
//! triangle (Duffy map). Segment rules are mapped Gauss-Legendre.

use std::sync::OnceLock;

/// A quadrature rule in physical coordinates. Weights carry the cell
/// measure, so `sum(w_q f(x_q))` approximates the integral directly.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn empty(degree: usize) -> Self {
        QuadratureRule {
            points: Vec::new(),
            weights: Vec::new(),
            degree,
        }
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }

    fn merge(mut self, other: QuadratureRule) -> QuadratureRule {
        self.points.extend(other.points);
        self.weights.extend(other.weights);
        self.degree = self.degree.min(other.degree);
        self
    }
}

pub const MAX_DEGREE: usize = 12;

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton
/// iteration on the Legendre polynomial and cached per point count.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    const MAX_N: usize = 16;
    static TABLES: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    assert!(n >= 1 && n <= MAX_N, "gauss_legendre: n out of range");
    let tables = TABLES.get_or_init(|| (1..=MAX_N).map(compute_gauss_legendre).collect());
    &tables[n - 1]
}

fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // P_n and P_n' via the three-term recurrence.
    let legendre = |x: f64| -> (f64, f64) {
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        (p1, dp)
    };
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        if n == 1 {
            nodes[0] = 0.0;
            weights[0] = 2.0;
            break;
        }
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

pub fn signed_area(v: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

/// Rule on a physical triangle, exact for polynomials up to `degree`.
pub fn triangle_rule(verts: &[[f64; 2]; 3], degree: usize) -> QuadratureRule {
    assert!(degree <= MAX_DEGREE, "triangle_rule: degree > {MAX_DEGREE}");
    let area = signed_area(verts).abs();
    let map = |l1: f64, l2: f64| -> [f64; 2] {
        let l0 = 1.0 - l1 - l2;
        [
            l0 * verts[0][0] + l1 * verts[1][0] + l2 * verts[2][0],
            l0 * verts[0][1] + l1 * verts[1][1] + l2 * verts[2][1],
        ]
    };
    if degree <= 1 {
        return QuadratureRule {
            points: vec![map(1.0 / 3.0, 1.0 / 3.0)],
            weights: vec![area],
            degree: 1,
        };
    }
    if degree == 2 {
        // Symmetric 3-point rule at the interior points (1/6, 1/6) etc.
        let pts = [
            map(1.0 / 6.0, 1.0 / 6.0),
            map(2.0 / 3.0, 1.0 / 6.0),
            map(1.0 / 6.0, 2.0 / 3.0),
        ];
        return QuadratureRule {
            points: pts.to_vec(),
            weights: vec![area / 3.0; 3],
            degree: 2,
        };
    }
    // Duffy map x = u, y = v(1-u) on the reference triangle; the Jacobian
    // (1-u) raises the u-degree by one.
    let n = (degree + 2).div_ceil(2);
    let (gx, gw) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (ui, uw) in gx.iter().zip(gw) {
        let u = 0.5 * (ui + 1.0);
        for (vi, vw) in gx.iter().zip(gw) {
            let v = 0.5 * (vi + 1.0);
            let (l1, l2) = (u, v * (1.0 - u));
            points.push(map(l1, l2));
            // 2*area * reference weight; reference measure is 1/2.
            weights.push(2.0 * area * 0.25 * uw * vw * (1.0 - u));
        }
    }
    QuadratureRule {
        points,
        weights,
        degree,
    }
}

/// Rule on the union of triangles (weights keep each part's measure).
pub fn triangles_rule(tris: &[[[f64; 2]; 3]], degree: usize) -> QuadratureRule {
    tris.iter()
        .map(|t| triangle_rule(t, degree))
        .fold(QuadratureRule::empty(degree), QuadratureRule::merge)
}

/// Gauss-Legendre rule on the segment [a, b]; weights sum to |b - a|.
pub fn segment_rule(a: [f64; 2], b: [f64; 2], degree: usize) -> QuadratureRule {
    assert!(degree <= MAX_DEGREE, "segment_rule: degree > {MAX_DEGREE}");
    let n = (degree + 2) / 2;
    let (gx, gw) = gauss_legendre(n.max(1));
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let points = gx
        .iter()
        .map(|x| {
            let t = 0.5 * (x + 1.0);
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect();
    let weights = gw.iter().map(|w| 0.5 * w * len).collect();
    QuadratureRule {
        points,
        weights,
        degree,
    }
}

/// Verifies monomial exactness of the generated rules on reference cells.
/// Cheap; meant to run once at program start and from the test suite.
pub fn self_check() -> crate::error::Result<()> {
    let fact = |k: usize| -> f64 { (1..=k).map(|i| i as f64).product::<f64>().max(1.0) };
    let reference = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    for degree in 0..=MAX_DEGREE {
        let rule = triangle_rule(&reference, degree);
        for a in 0..=degree {
            for b in 0..=(degree - a) {
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                let got = rule.integrate(|x, y| x.powi(a as i32) * y.powi(b as i32));
                if (got - exact).abs() > 1e-13 * exact.max(1.0) {
                    return Err(crate::error::Error::invalid(format!(
                        "triangle rule degree {degree} misses x^{a} y^{b}: {got} vs {exact}"
                    )));
                }
            }
        }
        let seg = segment_rule([0.0, 0.0], [1.0, 0.0], degree);
        for a in 0..=degree {
            let exact = 1.0 / (a as f64 + 1.0);
            let got = seg.integrate(|x, _| x.powi(a as i32));
            if (got - exact).abs() > 1e-13 {
                return Err(crate::error::Error::invalid(format!(
                    "segment rule degree {degree} misses x^{a}: {got} vs {exact}"
                )));
            }
        }
    }
    Ok(())
}
