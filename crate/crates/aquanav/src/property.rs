//! Decision properties: an input box over the 17-dim observation domain plus a
//! constraint on the network outputs, with the built-in theta0..theta2 safety
//! properties for both action spaces and a bit-stable text format.

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use std::fmt::Write as _;
use std::path::Path;

pub const OBS_DIM: usize = 17;
pub const LIDAR_BEAMS: usize = 15;

/// "Near obstacle" distance thresholds, normalized to the lidar domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearThresholds {
    pub front: f64,
    pub side: f64,
}

impl Default for NearThresholds {
    fn default() -> Self {
        NearThresholds { front: 0.35, side: 0.24 }
    }
}

/// Full observation domain: 15 lidar values in [0,1], target heading in [-1,1],
/// target distance in [0,1].
pub fn observation_domain() -> IntervalBox {
    let mut dims = vec![Interval { lo: 0.0, hi: 1.0 }; OBS_DIM];
    dims[15] = Interval { lo: -1.0, hi: 1.0 };
    IntervalBox::new(dims)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// Every action in `losers` must be dominated by some action in `winners`
    /// (the argmax can never be a loser).
    Dominance { losers: Vec<usize>, winners: Vec<usize> },
    /// `y_a - y_b > k`.
    DiffGreater { a: usize, b: usize, k: f64 },
    /// `|y_a - y_b| < k`.
    AbsDiffLess { a: usize, b: usize, k: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionProperty {
    pub id: String,
    pub input_box: IntervalBox,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Discrete,
    Continuous,
}

impl Flavor {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "discrete" => Some(Flavor::Discrete),
            "continuous" => Some(Flavor::Continuous),
            _ => None,
        }
    }
}

impl DecisionProperty {
    pub fn new(id: impl Into<String>, input_box: IntervalBox, constraint: Constraint) -> Result<Self> {
        let prop = DecisionProperty { id: id.into(), input_box, constraint };
        prop.validate()?;
        Ok(prop)
    }

    /// Constraint well-formedness; independent of the observation domain so the
    /// verifier also accepts synthetic low-dimensional properties.
    pub fn validate_constraint(&self) -> Result<()> {
        match &self.constraint {
            Constraint::Dominance { losers, winners } => {
                if losers.is_empty() || winners.is_empty() {
                    return Err(Error::Validation("dominance sets must be nonempty".into()));
                }
                if losers.iter().any(|i| winners.contains(i)) {
                    return Err(Error::Usage("dominance loser/winner sets overlap".into()));
                }
            }
            Constraint::DiffGreater { a, b, k } | Constraint::AbsDiffLess { a, b, k } => {
                if a == b {
                    return Err(Error::Usage("constraint compares an output with itself".into()));
                }
                if !k.is_finite() {
                    return Err(Error::Validation("constraint threshold k must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Full validation for navigation properties: constraint plus containment in
    /// the 17-dim observation domain.
    pub fn validate(&self) -> Result<()> {
        self.validate_constraint()?;
        if self.input_box.dim() != OBS_DIM {
            return Err(Error::Validation(format!(
                "property '{}' has {} dims, expected {}",
                self.id,
                self.input_box.dim(),
                OBS_DIM
            )));
        }
        let domain = observation_domain();
        for (i, (iv, dom)) in self.input_box.dims.iter().zip(&domain.dims).enumerate() {
            if !iv.is_subset_of(dom) {
                return Err(Error::Validation(format!(
                    "property '{}' dimension {} bound [{}, {}] outside domain [{}, {}]",
                    self.id, i, iv.lo, iv.hi, dom.lo, dom.hi
                )));
            }
        }
        Ok(())
    }

    /// Largest output index the constraint refers to; the network must have more outputs.
    pub fn max_output_index(&self) -> usize {
        match &self.constraint {
            Constraint::Dominance { losers, winners } => {
                *losers.iter().chain(winners).max().unwrap()
            }
            Constraint::DiffGreater { a, b, .. } | Constraint::AbsDiffLess { a, b, .. } => {
                *a.max(b)
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "property 1").unwrap();
        writeln!(s, "id {}", self.id).unwrap();
        for (i, iv) in self.input_box.dims.iter().enumerate() {
            writeln!(s, "dim {} {:?} {:?}", i, iv.lo, iv.hi).unwrap();
        }
        match &self.constraint {
            Constraint::Dominance { losers, winners } => {
                write!(s, "constraint dominance losers").unwrap();
                for l in losers {
                    write!(s, " {}", l).unwrap();
                }
                write!(s, " winners").unwrap();
                for w in winners {
                    write!(s, " {}", w).unwrap();
                }
                s.push('\n');
            }
            Constraint::DiffGreater { a, b, k } => {
                writeln!(s, "constraint diff_greater {} {} {:?}", a, b, k).unwrap();
            }
            Constraint::AbsDiffLess { a, b, k } => {
                writeln!(s, "constraint abs_diff_less {} {} {:?}", a, b, k).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut id = None;
        let mut dims: Vec<Option<Interval>> = vec![None; OBS_DIM];
        let mut constraint = None;
        let mut offset = 0;
        let mut saw_header = false;
        for line in text.split_inclusive('\n') {
            let line_offset = offset;
            offset += line.len();
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let perr = |m: &str| Error::Parse { offset: line_offset, message: m.into() };
            match toks[0] {
                "property" => {
                    if toks.len() != 2 || toks[1] != "1" {
                        return Err(perr("expected 'property 1'"));
                    }
                    saw_header = true;
                }
                "id" => {
                    if toks.len() != 2 {
                        return Err(perr("expected 'id <name>'"));
                    }
                    id = Some(toks[1].to_string());
                }
                "dim" => {
                    if toks.len() != 4 {
                        return Err(perr("expected 'dim <i> <lo> <hi>'"));
                    }
                    let i: usize = toks[1].parse().map_err(|_| perr("bad dimension index"))?;
                    if i >= OBS_DIM {
                        return Err(Error::Validation(format!("dimension {} out of range", i)));
                    }
                    let lo: f64 = toks[2].parse().map_err(|_| perr("bad float"))?;
                    let hi: f64 = toks[3].parse().map_err(|_| perr("bad float"))?;
                    dims[i] = Some(Interval::new(lo, hi).map_err(|e| Error::Validation(format!(
                        "dimension {}: {}",
                        i, e
                    )))?);
                }
                "constraint" => {
                    if toks.len() < 2 {
                        return Err(perr("missing constraint kind"));
                    }
                    constraint = Some(match toks[1] {
                        "dominance" => {
                            let rest = &toks[2..];
                            if rest.first() != Some(&"losers") {
                                return Err(perr("expected 'losers' list"));
                            }
                            let split = rest
                                .iter()
                                .position(|t| *t == "winners")
                                .ok_or_else(|| perr("expected 'winners' list"))?;
                            let parse_ids = |ts: &[&str]| -> Result<Vec<usize>> {
                                ts.iter()
                                    .map(|t| t.parse().map_err(|_| perr("bad output index")))
                                    .collect()
                            };
                            Constraint::Dominance {
                                losers: parse_ids(&rest[1..split])?,
                                winners: parse_ids(&rest[split + 1..])?,
                            }
                        }
                        "diff_greater" | "abs_diff_less" => {
                            if toks.len() != 5 {
                                return Err(perr("expected 'constraint <kind> <a> <b> <k>'"));
                            }
                            let a = toks[2].parse().map_err(|_| perr("bad output index"))?;
                            let b = toks[3].parse().map_err(|_| perr("bad output index"))?;
                            let k = toks[4].parse().map_err(|_| perr("bad float"))?;
                            if toks[1] == "diff_greater" {
                                Constraint::DiffGreater { a, b, k }
                            } else {
                                Constraint::AbsDiffLess { a, b, k }
                            }
                        }
                        other => return Err(perr(&format!("unknown constraint kind '{}'", other))),
                    });
                }
                other => return Err(perr(&format!("unknown directive '{}'", other))),
            }
        }
        if !saw_header {
            return Err(Error::Parse { offset: 0, message: "missing 'property 1' header".into() });
        }
        let id = id.ok_or(Error::Parse { offset: text.len(), message: "missing id".into() })?;
        let constraint =
            constraint.ok_or(Error::Parse { offset: text.len(), message: "missing constraint".into() })?;
        // unspecified dimensions default to the full observation domain
        let domain = observation_domain();
        let resolved: Vec<Interval> = dims
            .into_iter()
            .zip(domain.dims)
            .map(|(d, dom)| d.unwrap_or(dom))
            .collect();
        DecisionProperty::new(id, IntervalBox::new(resolved), constraint)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn box_with_near_side(side_dims: &[usize], side: f64) -> IntervalBox {
    let mut b = observation_domain();
    for &d in side_dims {
        b.dims[d] = Interval { lo: 0.0, hi: side };
    }
    b
}

/// Built-in theta0..theta2 for one action-space flavor.
///
/// Lidar beam 0 is the leftmost (-90 degrees) beam: dims 0..=5 are the left
/// side, dims 10..=14 the right side. Discrete outputs 0..=6 run Strong Right,
/// Right, Weak Right, None, Weak Left, Left, Strong Left; continuous outputs
/// are (0: left motor, 1: right motor).
pub fn builtin(flavor: Flavor, k: f64) -> Result<Vec<DecisionProperty>> {
    let near = NearThresholds::default();
    if flavor == Flavor::Continuous && k <= 0.0 {
        return Err(Error::Usage("continuous properties need k > 0".into()));
    }
    let left: Vec<usize> = (0..=5).collect();
    let right: Vec<usize> = (10..=14).collect();
    let both: Vec<usize> = left.iter().chain(&right).copied().collect();
    let i0 = box_with_near_side(&left, near.side);
    let i1 = box_with_near_side(&right, near.side);
    let i2 = box_with_near_side(&both, near.side);
    let props = match flavor {
        Flavor::Discrete => vec![
            DecisionProperty::new(
                "theta0-per",
                i0,
                Constraint::Dominance { losers: vec![4, 5, 6], winners: vec![0, 1, 2, 3] },
            )?,
            DecisionProperty::new(
                "theta1-per",
                i1,
                Constraint::Dominance { losers: vec![0, 1, 2], winners: vec![3, 4, 5, 6] },
            )?,
            DecisionProperty::new(
                "theta2-per",
                i2,
                Constraint::Dominance { losers: vec![0, 1, 5, 6], winners: vec![2, 3, 4] },
            )?,
        ],
        Flavor::Continuous => vec![
            DecisionProperty::new("theta0-peppo", i0, Constraint::DiffGreater { a: 0, b: 1, k })?,
            DecisionProperty::new("theta1-peppo", i1, Constraint::DiffGreater { a: 1, b: 0, k })?,
            DecisionProperty::new("theta2-peppo", i2, Constraint::AbsDiffLess { a: 0, b: 1, k })?,
        ],
    };
    Ok(props)
}
