//! Runtime shield: indexes the verifier's counterexample regions and overrides
//! actions whose observation falls inside a violating (or unresolved) sub-box.
//!
//! The acceleration structure is a bounding-volume tree over the boxes; every
//! query is answerable by a linear scan and the tree must agree with it exactly.

use crate::env::Action;
use crate::error::{Error, Result};
use crate::interval::IntervalBox;
use crate::nn::Network;
use crate::property::{observation_domain, Constraint, DecisionProperty, OBS_DIM};
use crate::verify::VerificationReport;
use std::fmt::Write as _;
use std::path::Path;

/// Margin added to continuous constraint thresholds by the override projection.
pub const OVERRIDE_MARGIN: f64 = 0.01;
/// Fallback discrete action when every action is masked: 3 = straight.
pub const FALLBACK_ACTION: usize = 3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Bvh {
    Leaf { bbox: IntervalBox, indices: Vec<usize> },
    Node { bbox: IntervalBox, left: Box<Bvh>, right: Box<Bvh> },
}

fn bbox_union(boxes: &[IntervalBox], indices: &[usize]) -> IntervalBox {
    let dim = boxes[indices[0]].dim();
    let mut out = boxes[indices[0]].clone();
    for &i in &indices[1..] {
        for d in 0..dim {
            out.dims[d].lo = out.dims[d].lo.min(boxes[i].dims[d].lo);
            out.dims[d].hi = out.dims[d].hi.max(boxes[i].dims[d].hi);
        }
    }
    out
}

fn build_bvh(boxes: &[IntervalBox], mut indices: Vec<usize>) -> Bvh {
    let bbox = bbox_union(boxes, &indices);
    if indices.len() <= LEAF_SIZE {
        return Bvh::Leaf { bbox, indices };
    }
    // split on the widest bbox dimension at the median box center
    let dim = bbox
        .dims
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.width().partial_cmp(&b.1.width()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    indices.sort_by(|&a, &b| {
        boxes[a].dims[dim]
            .midpoint()
            .partial_cmp(&boxes[b].dims[dim].midpoint())
            .unwrap()
            .then(a.cmp(&b))
    });
    let right_half = indices.split_off(indices.len() / 2);
    Bvh::Node {
        bbox,
        left: Box::new(build_bvh(boxes, indices)),
        right: Box::new(build_bvh(boxes, right_half)),
    }
}

fn bvh_hit(node: &Bvh, boxes: &[IntervalBox], point: &[f64]) -> bool {
    match node {
        Bvh::Leaf { bbox, indices } => {
            bbox.contains(point) && indices.iter().any(|&i| boxes[i].contains(point))
        }
        Bvh::Node { bbox, left, right } => {
            bbox.contains(point) && (bvh_hit(left, boxes, point) || bvh_hit(right, boxes, point))
        }
    }
}

/// Violating + unknown regions of one property (the violation metric's
/// conservative upper-bound semantics carried into deployment).
#[derive(Debug, Clone)]
pub struct PropertyRegions {
    pub property: DecisionProperty,
    pub boxes: Vec<IntervalBox>,
    tree: Option<Bvh>,
}

impl PropertyRegions {
    fn new(property: DecisionProperty, boxes: Vec<IntervalBox>) -> Self {
        let tree = if boxes.is_empty() {
            None
        } else {
            Some(build_bvh(&boxes, (0..boxes.len()).collect()))
        };
        PropertyRegions { property, boxes, tree }
    }

    /// Closed-interval containment via the tree.
    pub fn hit(&self, point: &[f64]) -> bool {
        self.tree.as_ref().is_some_and(|t| bvh_hit(t, &self.boxes, point))
    }

    /// Reference answer: linear scan over the box list.
    pub fn hit_linear(&self, point: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(point))
    }
}

#[derive(Debug, Clone)]
pub struct ViolationIndex {
    pub net_hash: String,
    pub regions: Vec<PropertyRegions>,
}

/// Build the runtime index from verification reports. Every report must come
/// from the same network; both violated and residual-unknown boxes are indexed.
pub fn build_index(
    reports: &[VerificationReport],
    properties: &[DecisionProperty],
) -> Result<ViolationIndex> {
    if reports.is_empty() {
        return Ok(ViolationIndex { net_hash: String::new(), regions: Vec::new() });
    }
    let net_hash = reports[0].net_hash.clone();
    if reports.iter().any(|r| r.net_hash != net_hash) {
        return Err(Error::Usage("reports come from different networks".into()));
    }
    let mut regions = Vec::with_capacity(reports.len());
    for report in reports {
        let property = properties
            .iter()
            .find(|p| p.id == report.property_id)
            .ok_or_else(|| {
                Error::Usage(format!("no property definition for report '{}'", report.property_id))
            })?
            .clone();
        let mut boxes = report.violating_boxes.clone();
        boxes.extend(report.unknown_boxes.iter().cloned());
        regions.push(PropertyRegions::new(property, boxes));
    }
    Ok(ViolationIndex { net_hash, regions })
}

impl ViolationIndex {
    /// Property ids whose counterexample regions contain the observation.
    /// Boundary points count as inside.
    pub fn check(&self, observation: &[f64]) -> Result<Vec<String>> {
        if observation.len() != OBS_DIM {
            return Err(Error::Input(format!(
                "observation has {} components, expected {}",
                observation.len(),
                OBS_DIM
            )));
        }
        let domain = observation_domain();
        if !domain.contains(observation) {
            return Err(Error::Input("observation outside the declared domain".into()));
        }
        Ok(self
            .regions
            .iter()
            .filter(|r| r.hit(observation))
            .map(|r| r.property.id.clone())
            .collect())
    }

    /// Linear-scan oracle with identical semantics to `check`.
    pub fn check_linear(&self, observation: &[f64]) -> Result<Vec<String>> {
        if observation.len() != OBS_DIM {
            return Err(Error::Input("bad observation length".into()));
        }
        Ok(self
            .regions
            .iter()
            .filter(|r| r.hit_linear(observation))
            .map(|r| r.property.id.clone())
            .collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "shieldindex 1").unwrap();
        writeln!(s, "net {}", self.net_hash).unwrap();
        writeln!(s, "properties {}", self.regions.len()).unwrap();
        for region in &self.regions {
            s.push_str(&region.property.to_text());
            writeln!(s, "boxes {}", region.boxes.len()).unwrap();
            for b in &region.boxes {
                s.push_str("box");
                for iv in &b.dims {
                    write!(s, " {:?} {:?}", iv.lo, iv.hi).unwrap();
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().peekable();
        let header = lines.next().ok_or(Error::Parse { offset: 0, message: "empty index file".into() })?;
        if header.trim() != "shieldindex 1" {
            return Err(Error::Parse { offset: 0, message: "expected 'shieldindex 1' header".into() });
        }
        let net_line = lines.next().unwrap_or("");
        let net_hash = net_line
            .strip_prefix("net ")
            .ok_or(Error::Parse { offset: 0, message: "expected 'net <hash>' line".into() })?
            .trim()
            .to_string();
        let count_line = lines.next().unwrap_or("");
        let n: usize = count_line
            .strip_prefix("properties ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Parse { offset: 0, message: "expected 'properties <n>' line".into() })?;
        let mut regions = Vec::with_capacity(n);
        for _ in 0..n {
            let mut prop_text = String::new();
            let mut boxes_count: Option<usize> = None;
            for line in lines.by_ref() {
                if let Some(v) = line.strip_prefix("boxes ") {
                    boxes_count = Some(v.trim().parse().map_err(|_| Error::Parse {
                        offset: 0,
                        message: "bad boxes count".into(),
                    })?);
                    break;
                }
                prop_text.push_str(line);
                prop_text.push('\n');
            }
            let boxes_count = boxes_count
                .ok_or(Error::Parse { offset: 0, message: "missing 'boxes <n>' line".into() })?;
            let property = DecisionProperty::from_text(&prop_text)?;
            let mut boxes = Vec::with_capacity(boxes_count);
            for _ in 0..boxes_count {
                let line = lines.next().ok_or(Error::Parse {
                    offset: text.len(),
                    message: "truncated box list".into(),
                })?;
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.first() != Some(&"box") || (toks.len() - 1) % 2 != 0 {
                    return Err(Error::Parse { offset: 0, message: "malformed box line".into() });
                }
                let dims = toks[1..]
                    .chunks(2)
                    .map(|c| {
                        let lo = c[0].parse::<f64>().map_err(|_| Error::Parse {
                            offset: 0,
                            message: "bad float in box".into(),
                        })?;
                        let hi = c[1].parse::<f64>().map_err(|_| Error::Parse {
                            offset: 0,
                            message: "bad float in box".into(),
                        })?;
                        crate::interval::Interval::new(lo, hi)
                    })
                    .collect::<Result<Vec<_>>>()?;
                boxes.push(IntervalBox::new(dims));
            }
            regions.push(PropertyRegions::new(property, boxes));
        }
        Ok(ViolationIndex { net_hash, regions })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShieldDecision {
    pub triggered: bool,
    pub violated_ids: Vec<String>,
    pub original: Action,
    pub overridden: Action,
    /// Set when the triggering constraints were jointly unsatisfiable and the
    /// straight-ahead fallback was substituted.
    pub fallback: bool,
}

fn argmax_unmasked(q: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in q.iter().enumerate() {
        if mask[i] {
            continue;
        }
        // ties resolve to the lowest index
        if best.map_or(true, |b| *v > q[b]) {
            best = Some(i);
        }
    }
    best
}

fn continuous_satisfied(left: f64, right: f64, c: &Constraint) -> bool {
    let value = |i: usize| if i == 0 { left } else { right };
    match *c {
        Constraint::DiffGreater { a, b, k } => value(a) - value(b) >= k + OVERRIDE_MARGIN - 1e-12,
        Constraint::AbsDiffLess { a, b, k } => {
            (value(a) - value(b)).abs() <= k - OVERRIDE_MARGIN + 1e-12
        }
        Constraint::Dominance { .. } => true,
    }
}

/// Override the raw policy action so it cannot realize any violated property.
///
/// Discrete: mask the union of loser actions and take the argmax over the rest.
/// Continuous: minimal-L2 projection of (left, right) onto the constraint set,
/// with a fixed margin past each threshold.
pub fn safe_action(
    net: &Network,
    observation: &[f64],
    violated: &[&DecisionProperty],
) -> Result<ShieldDecision> {
    let out = net.forward(observation)?;
    let discrete = out.len() > 2;
    let violated_ids: Vec<String> = violated.iter().map(|p| p.id.clone()).collect();
    if discrete {
        let original = Action::Discrete(argmax_unmasked(&out, &vec![false; out.len()]).unwrap());
        if violated.is_empty() {
            return Ok(ShieldDecision {
                triggered: false,
                violated_ids,
                original,
                overridden: original,
                fallback: false,
            });
        }
        let mut mask = vec![false; out.len()];
        for prop in violated {
            if let Constraint::Dominance { losers, .. } = &prop.constraint {
                for &l in losers {
                    if l < mask.len() {
                        mask[l] = true;
                    }
                }
            } else {
                return Err(Error::Usage(format!(
                    "property '{}' has a continuous constraint but the network is discrete",
                    prop.id
                )));
            }
        }
        match argmax_unmasked(&out, &mask) {
            Some(choice) => Ok(ShieldDecision {
                triggered: true,
                violated_ids,
                original,
                overridden: Action::Discrete(choice),
                fallback: false,
            }),
            None => Ok(ShieldDecision {
                triggered: true,
                violated_ids,
                original,
                overridden: Action::Discrete(FALLBACK_ACTION),
                fallback: true,
            }),
        }
    } else {
        let raw = (out[0].clamp(0.0, 1.0), out[1].clamp(0.0, 1.0));
        let original = Action::Continuous { left: raw.0, right: raw.1 };
        if violated.is_empty() {
            return Ok(ShieldDecision {
                triggered: false,
                violated_ids,
                original,
                overridden: original,
                fallback: false,
            });
        }
        let (mut left, mut right) = raw;
        let constraints: Vec<&Constraint> = violated.iter().map(|p| &p.constraint).collect();
        // iterated pairwise projection; the builtin constraints all act on the
        // single scalar left-right, so this converges immediately when feasible
        for _ in 0..16 {
            for c in &constraints {
                let (l, r) = project(left, right, c);
                left = l;
                right = r;
            }
        }
        let feasible = constraints.iter().all(|c| continuous_satisfied(left, right, c));
        if feasible {
            Ok(ShieldDecision {
                triggered: true,
                violated_ids,
                original,
                overridden: Action::Continuous { left, right },
                fallback: false,
            })
        } else {
            let mean = (raw.0 + raw.1) / 2.0;
            Ok(ShieldDecision {
                triggered: true,
                violated_ids,
                original,
                overridden: Action::Continuous { left: mean, right: mean },
                fallback: true,
            })
        }
    }
}

fn project(left: f64, right: f64, c: &Constraint) -> (f64, f64) {
    let value = |i: usize| if i == 0 { left } else { right };
    match *c {
        Constraint::DiffGreater { a, b, k } => {
            let target = k + OVERRIDE_MARGIN;
            let d = value(a) - value(b);
            if d >= target {
                (left, right)
            } else {
                // minimal symmetric adjustment onto the half-plane
                let shift = (target - d) / 2.0;
                let (mut l, mut r) = (left, right);
                if a == 0 {
                    l += shift;
                    r -= shift;
                } else {
                    l -= shift;
                    r += shift;
                }
                clamp_pair(l, r)
            }
        }
        Constraint::AbsDiffLess { a, b, k } => {
            let limit = (k - OVERRIDE_MARGIN).max(0.0);
            let d = value(a) - value(b);
            if d.abs() <= limit {
                (left, right)
            } else {
                let target = limit * d.signum();
                let shift = (d - target) / 2.0;
                let (mut l, mut r) = (left, right);
                if a == 0 {
                    l -= shift;
                    r += shift;
                } else {
                    l += shift;
                    r -= shift;
                }
                clamp_pair(l, r)
            }
        }
        Constraint::Dominance { .. } => (left, right),
    }
}

/// Translate the pair into [0,1]^2 without changing the difference.
fn clamp_pair(left: f64, right: f64) -> (f64, f64) {
    let mut shift = 0.0;
    let max = left.max(right);
    let min = left.min(right);
    if max > 1.0 {
        shift = 1.0 - max;
    } else if min < 0.0 {
        shift = -min;
    }
    (left + shift, right + shift)
}
