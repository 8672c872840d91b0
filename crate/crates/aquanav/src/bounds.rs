//! Output-bound computation for relu/linear feedforward networks.
//!
//! Two propagation modes share one entry point: `naive` pushes plain intervals
//! through each layer, `symbolic` carries per-neuron affine enclosures of the
//! input variables and concretizes them only when needed. Symbolic concrete
//! intervals are intersected with the naive ones layer by layer, so symbolic
//! output bounds are never looser than naive ones.

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::nn::{Activation, Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Naive,
    Symbolic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Naive => "naive",
            Mode::Symbolic => "symbolic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "naive" => Some(Mode::Naive),
            "symbolic" => Some(Mode::Symbolic),
            _ => None,
        }
    }
}

/// Affine function of the input variables: `coeffs . x + constant`.
#[derive(Debug, Clone)]
pub struct AffineForm {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl AffineForm {
    fn zero(n: usize) -> Self {
        AffineForm { coeffs: vec![0.0; n], constant: 0.0 }
    }

    fn input_var(n: usize, i: usize) -> Self {
        let mut f = Self::zero(n);
        f.coeffs[i] = 1.0;
        f
    }

    fn scale(&self, c: f64) -> Self {
        AffineForm {
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
            constant: self.constant * c,
        }
    }

    fn add_assign_scaled(&mut self, other: &AffineForm, c: f64) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * c;
        }
        self.constant += other.constant * c;
    }

    fn sub(&self, other: &AffineForm) -> Self {
        AffineForm {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
            constant: self.constant - other.constant,
        }
    }

    /// Minimum of the form over the box.
    fn min_over(&self, input: &IntervalBox) -> f64 {
        let mut acc = self.constant;
        for (c, iv) in self.coeffs.iter().zip(&input.dims) {
            acc += if *c >= 0.0 { c * iv.lo } else { c * iv.hi };
        }
        acc
    }

    /// Maximum of the form over the box.
    fn max_over(&self, input: &IntervalBox) -> f64 {
        let mut acc = self.constant;
        for (c, iv) in self.coeffs.iter().zip(&input.dims) {
            acc += if *c >= 0.0 { c * iv.hi } else { c * iv.lo };
        }
        acc
    }
}

/// Per-neuron affine enclosures plus the concretized interval for one layer.
#[derive(Debug, Clone)]
pub struct SymbolicBounds {
    pub lower: Vec<AffineForm>,
    pub upper: Vec<AffineForm>,
    pub concrete: Vec<Interval>,
}

/// Result of propagating a box through a network.
#[derive(Debug, Clone)]
pub struct OutputBounds {
    pub intervals: Vec<Interval>,
    symbolic: Option<(SymbolicBounds, IntervalBox)>,
}

impl OutputBounds {
    /// Sound enclosure of `y_a - y_b`. In symbolic mode the affine forms are
    /// subtracted before concretizing, which cancels shared input terms.
    pub fn diff_interval(&self, a: usize, b: usize) -> Interval {
        let naive = Interval {
            lo: self.intervals[a].lo - self.intervals[b].hi,
            hi: self.intervals[a].hi - self.intervals[b].lo,
        };
        match &self.symbolic {
            None => naive,
            Some((sym, input)) => {
                let lo = sym.lower[a].sub(&sym.upper[b]).min_over(input);
                let hi = sym.upper[a].sub(&sym.lower[b]).max_over(input);
                Interval { lo, hi }.intersect(&naive)
            }
        }
    }
}

fn check_supported(net: &Network) -> Result<()> {
    for (i, layer) in net.layers().iter().enumerate() {
        if layer.activation == Activation::Tanh {
            return Err(Error::Capability(format!(
                "layer {} uses tanh; verification supports relu/linear only",
                i
            )));
        }
    }
    Ok(())
}

/// Interval arithmetic through `W x + b`: split each weight by sign.
pub fn affine_propagate_naive(layer: &Layer, input: &[Interval]) -> Result<Vec<Interval>> {
    if input.len() != layer.in_dim() {
        return Err(Error::Structural(format!(
            "interval input width {} does not match layer input width {}",
            input.len(),
            layer.in_dim()
        )));
    }
    Ok(layer
        .weights
        .iter()
        .zip(&layer.bias)
        .map(|(row, b)| {
            let mut lo = *b;
            let mut hi = *b;
            for (w, iv) in row.iter().zip(input) {
                if *w >= 0.0 {
                    lo += w * iv.lo;
                    hi += w * iv.hi;
                } else {
                    lo += w * iv.hi;
                    hi += w * iv.lo;
                }
            }
            Interval { lo, hi }
        })
        .collect())
}

/// Exact affine composition of the layer with the incoming enclosures.
fn affine_propagate_symbolic(layer: &Layer, lower: &[AffineForm], upper: &[AffineForm]) -> (Vec<AffineForm>, Vec<AffineForm>) {
    let n_inputs = lower[0].coeffs.len();
    let mut new_lower = Vec::with_capacity(layer.out_dim());
    let mut new_upper = Vec::with_capacity(layer.out_dim());
    for (row, b) in layer.weights.iter().zip(&layer.bias) {
        let mut lo = AffineForm::zero(n_inputs);
        let mut hi = AffineForm::zero(n_inputs);
        lo.constant = *b;
        hi.constant = *b;
        for (j, w) in row.iter().enumerate() {
            if *w >= 0.0 {
                lo.add_assign_scaled(&lower[j], *w);
                hi.add_assign_scaled(&upper[j], *w);
            } else {
                lo.add_assign_scaled(&upper[j], *w);
                hi.add_assign_scaled(&lower[j], *w);
            }
        }
        new_lower.push(lo);
        new_upper.push(hi);
    }
    (new_lower, new_upper)
}

/// Naive ReLU on intervals: clip both ends at zero.
pub fn relu_relax_naive(bounds: &mut [Interval]) {
    for iv in bounds {
        iv.lo = iv.lo.max(0.0);
        iv.hi = iv.hi.max(0.0);
    }
}

/// Linear ReLU relaxation on affine enclosures. For an unstable neuron with
/// pre-activation bounds [l, u] (l < 0 < u, slope λ = u/(u-l)):
/// upper line λ(x - l), lower line λx.
fn relu_relax_symbolic(lower: &mut AffineForm, upper: &mut AffineForm, pre: Interval) -> Interval {
    let (l, u) = (pre.lo, pre.hi);
    if u <= 0.0 {
        let n = lower.coeffs.len();
        *lower = AffineForm::zero(n);
        *upper = AffineForm::zero(n);
        Interval { lo: 0.0, hi: 0.0 }
    } else if l >= 0.0 {
        pre
    } else {
        let slope = u / (u - l);
        *lower = lower.scale(slope);
        *upper = upper.scale(slope);
        upper.constant -= slope * l;
        Interval { lo: 0.0, hi: u }
    }
}

/// Sound per-output bounds of `net` over `input`, in the requested mode.
pub fn output_bounds(net: &Network, input: &IntervalBox, mode: Mode) -> Result<Vec<Interval>> {
    Ok(propagate(net, input, mode)?.intervals)
}

/// Full propagation, keeping symbolic forms for constraint checks that subtract outputs.
pub fn propagate(net: &Network, input: &IntervalBox, mode: Mode) -> Result<OutputBounds> {
    check_supported(net)?;
    if input.dim() != net.input_dim() {
        return Err(Error::Structural(format!(
            "box dimension {} does not match network input_dim {}",
            input.dim(),
            net.input_dim()
        )));
    }
    match mode {
        Mode::Naive => {
            let mut cur: Vec<Interval> = input.dims.clone();
            for layer in net.layers() {
                cur = affine_propagate_naive(layer, &cur)?;
                if layer.activation == Activation::Relu {
                    relu_relax_naive(&mut cur);
                }
            }
            Ok(OutputBounds { intervals: cur, symbolic: None })
        }
        Mode::Symbolic => {
            let n = input.dim();
            let mut naive: Vec<Interval> = input.dims.clone();
            let mut lower: Vec<AffineForm> = (0..n).map(|i| AffineForm::input_var(n, i)).collect();
            let mut upper = lower.clone();
            let mut concrete: Vec<Interval> = input.dims.clone();
            for layer in net.layers() {
                let naive_pre = affine_propagate_naive(layer, &naive)?;
                let (mut new_lower, mut new_upper) = affine_propagate_symbolic(layer, &lower, &upper);
                let mut new_concrete = Vec::with_capacity(layer.out_dim());
                for i in 0..layer.out_dim() {
                    let sym = Interval {
                        lo: new_lower[i].min_over(input),
                        hi: new_upper[i].max_over(input),
                    };
                    new_concrete.push(sym.intersect(&naive_pre[i]));
                }
                naive = naive_pre;
                if layer.activation == Activation::Relu {
                    relu_relax_naive(&mut naive);
                    for i in 0..new_concrete.len() {
                        let post = relu_relax_symbolic(&mut new_lower[i], &mut new_upper[i], new_concrete[i]);
                        new_concrete[i] = post.intersect(&naive[i]);
                    }
                }
                lower = new_lower;
                upper = new_upper;
                concrete = new_concrete;
            }
            let sym = SymbolicBounds { lower, upper, concrete: concrete.clone() };
            Ok(OutputBounds { intervals: concrete, symbolic: Some((sym, input.clone())) })
        }
    }
}
