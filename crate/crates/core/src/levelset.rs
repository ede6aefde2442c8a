//! Level-set functions selecting the two material subdomains.
//!
//! Sign convention: phi < 0 is region 1, phi >= 0 is region 2.

use crate::error::{Error, Result};

type ValueFn = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;

pub struct LevelSet {
    pub name: String,
    value: ValueFn,
    gradient: Option<GradFn>,
}

impl LevelSet {
    pub fn new(name: impl Into<String>, value: ValueFn, gradient: Option<GradFn>) -> LevelSet {
        LevelSet {
            name: name.into(),
            value,
            gradient,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.value)(x, y)
    }

    pub fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        self.gradient.as_ref().map(|g| g(x, y))
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// The 12-lobed petal curve of the benchmark problem:
    /// phi = (x^2+y^2)^2 (1 + 0.5 sin(12 atan2(y,x))) - 0.3.
    pub fn petal() -> LevelSet {
        LevelSet::new(
            "petal",
            Box::new(|x, y| petal_value(x, y)),
            Some(Box::new(|x, y| petal_gradient(x, y))),
        )
    }

    pub fn vertical_line(c: f64) -> LevelSet {
        LevelSet::new(
            format!("vertical_line:{c}"),
            Box::new(move |x, _| x - c),
            Some(Box::new(|_, _| [1.0, 0.0])),
        )
    }

    pub fn circle(r: f64) -> LevelSet {
        LevelSet::new(
            format!("circle:{r}"),
            Box::new(move |x, y| x * x + y * y - r * r),
            Some(Box::new(|x, y| [2.0 * x, 2.0 * y])),
        )
    }

    /// A constant level set (phi = c everywhere); useful for uncut setups.
    pub fn constant(c: f64) -> LevelSet {
        LevelSet::new(format!("constant:{c}"), Box::new(move |_, _| c), None)
    }

    /// Parses "petal", "vertical_line:<c>", "circle:<r>", "constant:<c>".
    pub fn from_name(name: &str) -> Result<LevelSet> {
        if name == "petal" {
            return Ok(LevelSet::petal());
        }
        if let Some(arg) = name.strip_prefix("vertical_line:") {
            let c: f64 = arg
                .parse()
                .map_err(|_| Error::Config(format!("bad vertical_line parameter {arg:?}")))?;
            return Ok(LevelSet::vertical_line(c));
        }
        if let Some(arg) = name.strip_prefix("circle:") {
            let r: f64 = arg
                .parse()
                .map_err(|_| Error::Config(format!("bad circle parameter {arg:?}")))?;
            if r <= 0.0 {
                return Err(Error::Config("circle radius must be positive".into()));
            }
            return Ok(LevelSet::circle(r));
        }
        if let Some(arg) = name.strip_prefix("constant:") {
            let c: f64 = arg
                .parse()
                .map_err(|_| Error::Config(format!("bad constant parameter {arg:?}")))?;
            return Ok(LevelSet::constant(c));
        }
        Err(Error::Config(format!("unknown level set {name:?}")))
    }

    /// Validates the analytic gradient against central finite differences
    /// at the given sample points.
    pub fn validate_gradient(&self, samples: &[[f64; 2]], step: f64, rel_tol: f64) -> Result<()> {
        let Some(grad) = &self.gradient else {
            return Ok(());
        };
        for &[x, y] in samples {
            let g = grad(x, y);
            let fd = [
                (self.eval(x + step, y) - self.eval(x - step, y)) / (2.0 * step),
                (self.eval(x, y + step) - self.eval(x, y - step)) / (2.0 * step),
            ];
            let scale = (g[0] * g[0] + g[1] * g[1]).sqrt().max(1.0);
            let err = ((g[0] - fd[0]).powi(2) + (g[1] - fd[1]).powi(2)).sqrt();
            if err > rel_tol * scale {
                return Err(Error::invalid(format!(
                    "gradient of {} off at ({x}, {y}): analytic {:?} vs fd {:?}",
                    self.name, g, fd
                )));
            }
        }
        Ok(())
    }
}

pub fn petal_value(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    let theta = y.atan2(x);
    r2 * r2 * (1.0 + 0.5 * (12.0 * theta).sin()) - 0.3
}

/// Gradient of the petal level set, from the polar form
/// r^4 (1 + 0.5 sin 12t) - 0.3.
pub fn petal_gradient(x: f64, y: f64) -> [f64; 2] {
    let r2 = x * x + y * y;
    let theta = y.atan2(x);
    let s = 1.0 + 0.5 * (12.0 * theta).sin();
    let c = (12.0 * theta).cos();
    [
        4.0 * r2 * x * s - 6.0 * r2 * y * c,
        4.0 * r2 * y * s + 6.0 * r2 * x * c,
    ]
}

/// Laplacian of the petal level set; in polar form
/// delta phi = r^2 (16 - 64 sin 12t).
pub fn petal_laplacian(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    let theta = y.atan2(x);
    r2 * (16.0 - 64.0 * (12.0 * theta).sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_ring() -> Vec<[f64; 2]> {
        // Points away from the origin (the polar form is singular there).
        let mut pts = Vec::new();
        for i in 0..48 {
            let t = i as f64 * std::f64::consts::TAU / 48.0 + 0.013;
            for r in [0.4, 0.7, 0.95] {
                pts.push([r * t.cos(), r * t.sin()]);
            }
        }
        pts
    }

    #[test]
    fn petal_gradient_matches_finite_differences() {
        LevelSet::petal()
            .validate_gradient(&sample_ring(), 1e-6, 1e-6)
            .unwrap();
    }

    #[test]
    fn petal_laplacian_matches_finite_differences() {
        for &[x, y] in &sample_ring() {
            let h = 1e-4;
            let fd = (petal_value(x + h, y)
                + petal_value(x - h, y)
                + petal_value(x, y + h)
                + petal_value(x, y - h)
                - 4.0 * petal_value(x, y))
                / (h * h);
            assert!(
                (petal_laplacian(x, y) - fd).abs() < 1e-5,
                "laplacian off at ({x}, {y})"
            );
        }
    }

    #[test]
    fn petal_radius_bounds() {
        // The zero curve lies between (0.2)^(1/4) and (0.6)^(1/4).
        for i in 0..360 {
            let t = i as f64 * std::f64::consts::TAU / 360.0;
            let denom = 1.0 + 0.5 * (12.0 * t).sin();
            let r = (0.3 / denom).powf(0.25);
            assert!(r > 0.668 && r < 0.881);
            let (x, y) = (r * t.cos(), r * t.sin());
            assert!(petal_value(x, y).abs() < 1e-12);
        }
    }

    #[test]
    fn from_name_parses_and_rejects() {
        assert!(LevelSet::from_name("petal").is_ok());
        assert_eq!(
            LevelSet::from_name("vertical_line:0.3").unwrap().eval(0.3, 1.0),
            0.0
        );
        let c = LevelSet::from_name("circle:0.5").unwrap();
        assert!(c.eval(0.0, 0.0) < 0.0 && c.eval(1.0, 0.0) > 0.0);
        assert!(LevelSet::from_name("blob").is_err());
        assert!(LevelSet::from_name("circle:-1").is_err());
    }

    #[test]
    fn line_gradient_exact() {
        // Central differences of a linear function are exact up to the
        // rounding of (x + h) - (x - h).
        LevelSet::vertical_line(0.3)
            .validate_gradient(&[[0.0, 0.0], [1.0, 2.0]], 1e-6, 1e-9)
            .unwrap();
    }
}
