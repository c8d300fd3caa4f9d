//! Bookkeeping for inequality checks evaluated over many points.

/// Absolute slack applied to inequality margins to absorb rounding.
pub const MARGIN_SLACK: f64 = 1e-9;

/// Outcome of checking one inequality `observed <= bound` over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityCheck {
    pub property: String,
    pub pass: bool,
    /// Smallest `bound - observed` seen (signed).
    pub worst_margin: f64,
    /// Norm of the point (or the larger norm of a pair) where the worst margin occurred.
    pub witness_norm: f64,
    pub n_points: usize,
}

/// CSV with header `property,pass,worst_margin,witness_norm,n_points`.
pub fn checks_to_csv(checks: &[InequalityCheck]) -> String {
    let mut s = String::from("property,pass,worst_margin,witness_norm,n_points\n");
    for c in checks {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            c.property,
            c.pass,
            crate::format::fmt_f64(c.worst_margin),
            crate::format::fmt_f64(c.witness_norm),
            c.n_points
        ));
    }
    s
}

/// Uniform pair of distinct indices below `n` (requires `n >= 2`).
pub(crate) fn distinct_pair<R: rand::Rng>(rng: &mut R, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let j = rng.random_range(0..n - 1);
    (i, if j >= i { j + 1 } else { j })
}

#[derive(Debug, Clone)]
pub(crate) struct MarginTracker {
    property: String,
    worst: f64,
    witness: f64,
    count: usize,
    saw_nan: bool,
}

impl MarginTracker {
    pub(crate) fn new(property: impl Into<String>) -> Self {
        Self {
            property: property.into(),
            worst: f64::INFINITY,
            witness: 0.0,
            count: 0,
            saw_nan: false,
        }
    }

    /// Record `bound - observed` at a witness of norm `witness`.
    pub(crate) fn record(&mut self, bound: f64, observed: f64, witness: f64) {
        self.count += 1;
        let margin = bound - observed;
        if margin.is_nan() {
            self.saw_nan = true;
            self.witness = witness;
            return;
        }
        if margin < self.worst {
            self.worst = margin;
            self.witness = witness;
        }
    }

    pub(crate) fn finish(self) -> InequalityCheck {
        let worst = if self.saw_nan { f64::NAN } else { self.worst };
        InequalityCheck {
            property: self.property,
            pass: !self.saw_nan && self.count > 0 && worst >= -MARGIN_SLACK,
            worst_margin: worst,
            witness_norm: self.witness,
            n_points: self.count,
        }
    }
}
