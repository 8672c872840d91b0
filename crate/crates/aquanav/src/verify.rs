//! Interval-analysis verification of decision properties.
//!
//! The input area is split into independent sub-boxes, each judged on its own
//! output bounds; Unknown boxes are bisected until the depth budget runs out.
//! Sub-box volumes are accounted per verdict and the violation metric
//! (violated + unknown volume, normalized) is a certified upper bound on the
//! fraction of the input area where the constraint can fail.

use crate::bounds::{propagate, Mode, OutputBounds};
use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::nn::Network;
use crate::property::{Constraint, DecisionProperty};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Violated,
    Unknown,
}

/// Dominance check on per-output intervals: Holds when no loser can be the
/// argmax, Violated when some loser strictly beats every winner.
pub fn check_dominance(bounds: &[Interval], losers: &[usize], winners: &[usize]) -> Result<Verdict> {
    if losers.is_empty() || winners.is_empty() {
        return Err(Error::Usage("dominance sets must be nonempty".into()));
    }
    if losers.iter().any(|i| winners.contains(i)) {
        return Err(Error::Usage("dominance loser/winner sets overlap".into()));
    }
    if losers.iter().chain(winners).any(|&i| i >= bounds.len()) {
        return Err(Error::Usage("dominance index out of output range".into()));
    }
    let holds = losers
        .iter()
        .all(|&i| winners.iter().any(|&j| bounds[i].hi < bounds[j].lo));
    if holds {
        return Ok(Verdict::Holds);
    }
    let max_winner_hi = winners.iter().map(|&j| bounds[j].hi).fold(f64::NEG_INFINITY, f64::max);
    let violated = losers.iter().any(|&i| bounds[i].lo > max_winner_hi);
    if violated {
        return Ok(Verdict::Violated);
    }
    Ok(Verdict::Unknown)
}

/// Continuous-output checks on the enclosure of `y_a - y_b`.
pub fn check_continuous(out: &OutputBounds, constraint: &Constraint) -> Result<Verdict> {
    match *constraint {
        Constraint::DiffGreater { a, b, k } => {
            if a == b {
                return Err(Error::Usage("constraint compares an output with itself".into()));
            }
            let d = out.diff_interval(a, b);
            Ok(if d.lo > k {
                Verdict::Holds
            } else if d.hi <= k {
                Verdict::Violated
            } else {
                Verdict::Unknown
            })
        }
        Constraint::AbsDiffLess { a, b, k } => {
            if a == b {
                return Err(Error::Usage("constraint compares an output with itself".into()));
            }
            let d = out.diff_interval(a, b);
            Ok(if -k < d.lo && d.hi < k {
                Verdict::Holds
            } else if d.lo >= k || d.hi <= -k {
                Verdict::Violated
            } else {
                Verdict::Unknown
            })
        }
        Constraint::Dominance { .. } => {
            Err(Error::Usage("dominance constraints are checked via check_dominance".into()))
        }
    }
}

fn judge(net: &Network, sub: &IntervalBox, constraint: &Constraint, mode: Mode) -> Result<Verdict> {
    let out = propagate(net, sub, mode)?;
    match constraint {
        Constraint::Dominance { losers, winners } => check_dominance(&out.intervals, losers, winners),
        _ => check_continuous(&out, constraint),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    pub mode: Mode,
    pub max_depth: usize,
    pub workers: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { mode: Mode::Symbolic, max_depth: 10, workers: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub property_id: String,
    pub net_hash: String,
    pub mode: Mode,
    pub max_depth: usize,
    pub total_volume: f64,
    pub holds_volume: f64,
    pub violated_volume: f64,
    pub unknown_volume: f64,
    /// Sub-boxes proven to violate the constraint, canonically sorted.
    pub violating_boxes: Vec<IntervalBox>,
    /// Residual Unknown sub-boxes at the depth budget, canonically sorted.
    pub unknown_boxes: Vec<IntervalBox>,
    pub boxes_processed: usize,
    pub max_depth_reached: usize,
    pub wall_time_ms: f64,
}

impl VerificationReport {
    /// Certified upper bound: Unknown volume counts as violating. Clamped to
    /// [0, 1] because summing many leaf volumes can overshoot the root's
    /// product volume by a few ulps.
    pub fn violation_metric(&self) -> f64 {
        if self.total_volume > 0.0 {
            ((self.violated_volume + self.unknown_volume) / self.total_volume).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// Proven-violated fraction only.
    pub fn violated_fraction(&self) -> f64 {
        if self.total_volume > 0.0 {
            (self.violated_volume / self.total_volume).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    fn write_boxes(s: &mut String, tag: &str, boxes: &[IntervalBox]) {
        for b in boxes {
            s.push_str(tag);
            for iv in &b.dims {
                write!(s, " {:?} {:?}", iv.lo, iv.hi).unwrap();
            }
            s.push('\n');
        }
    }

    /// Deterministic body: everything except wall time.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "report 1").unwrap();
        writeln!(s, "property {}", self.property_id).unwrap();
        writeln!(s, "net {}", self.net_hash).unwrap();
        writeln!(s, "mode {}", self.mode.name()).unwrap();
        writeln!(s, "max_depth {}", self.max_depth).unwrap();
        writeln!(s, "total_volume {:?}", self.total_volume).unwrap();
        writeln!(s, "holds_volume {:?}", self.holds_volume).unwrap();
        writeln!(s, "violated_volume {:?}", self.violated_volume).unwrap();
        writeln!(s, "unknown_volume {:?}", self.unknown_volume).unwrap();
        writeln!(s, "violation {:?}", self.violation_metric()).unwrap();
        writeln!(s, "violated_fraction {:?}", self.violated_fraction()).unwrap();
        writeln!(s, "boxes_processed {}", self.boxes_processed).unwrap();
        writeln!(s, "max_depth_reached {}", self.max_depth_reached).unwrap();
        writeln!(s, "violating_boxes {}", self.violating_boxes.len()).unwrap();
        Self::write_boxes(&mut s, "vbox", &self.violating_boxes);
        writeln!(s, "unknown_boxes {}", self.unknown_boxes.len()).unwrap();
        Self::write_boxes(&mut s, "ubox", &self.unknown_boxes);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = self.canonical_text();
        writeln!(s, "wall_time_ms {:?}", self.wall_time_ms).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut report = VerificationReport {
            property_id: String::new(),
            net_hash: String::new(),
            mode: Mode::Symbolic,
            max_depth: 0,
            total_volume: 0.0,
            holds_volume: 0.0,
            violated_volume: 0.0,
            unknown_volume: 0.0,
            violating_boxes: Vec::new(),
            unknown_boxes: Vec::new(),
            boxes_processed: 0,
            max_depth_reached: 0,
            wall_time_ms: 0.0,
        };
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
            let parse_f64 = |t: &str| t.parse::<f64>().map_err(|_| perr("bad float"));
            let parse_box = |ts: &[&str]| -> Result<IntervalBox> {
                if ts.len() % 2 != 0 || ts.is_empty() {
                    return Err(perr("box needs an even number of bounds"));
                }
                let dims = ts
                    .chunks(2)
                    .map(|c| {
                        let lo = c[0].parse::<f64>().map_err(|_| perr("bad float"))?;
                        let hi = c[1].parse::<f64>().map_err(|_| perr("bad float"))?;
                        Interval::new(lo, hi)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(IntervalBox::new(dims))
            };
            match toks[0] {
                "report" => saw_header = true,
                "property" => report.property_id = toks.get(1).ok_or_else(|| perr("missing id"))?.to_string(),
                "net" => report.net_hash = toks.get(1).ok_or_else(|| perr("missing hash"))?.to_string(),
                "mode" => {
                    report.mode = Mode::from_name(toks.get(1).copied().unwrap_or(""))
                        .ok_or_else(|| perr("unknown mode"))?
                }
                "max_depth" => report.max_depth = toks[1].parse().map_err(|_| perr("bad int"))?,
                "total_volume" => report.total_volume = parse_f64(toks[1])?,
                "holds_volume" => report.holds_volume = parse_f64(toks[1])?,
                "violated_volume" => report.violated_volume = parse_f64(toks[1])?,
                "unknown_volume" => report.unknown_volume = parse_f64(toks[1])?,
                "violation" | "violated_fraction" => {}
                "boxes_processed" => report.boxes_processed = toks[1].parse().map_err(|_| perr("bad int"))?,
                "max_depth_reached" => {
                    report.max_depth_reached = toks[1].parse().map_err(|_| perr("bad int"))?
                }
                "violating_boxes" | "unknown_boxes" => {}
                "vbox" => report.violating_boxes.push(parse_box(&toks[1..])?),
                "ubox" => report.unknown_boxes.push(parse_box(&toks[1..])?),
                "wall_time_ms" => report.wall_time_ms = parse_f64(toks[1])?,
                other => return Err(perr(&format!("unknown directive '{}'", other))),
            }
        }
        if !saw_header {
            return Err(Error::Parse { offset: 0, message: "missing 'report 1' header".into() });
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Verify `property` over its declared input area.
pub fn verify_property(
    net: &Network,
    property: &DecisionProperty,
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    verify_boxes(net, property, std::slice::from_ref(&property.input_box), cfg)
}

/// Verify `property` over an explicit work list of sub-boxes. Each item is an
/// independent task; results are merged in a fixed order so the report does not
/// depend on worker count or scheduling.
pub fn verify_boxes(
    net: &Network,
    property: &DecisionProperty,
    roots: &[IntervalBox],
    cfg: &VerifyConfig,
) -> Result<VerificationReport> {
    if cfg.max_depth < 1 {
        return Err(Error::Validation("max_depth must be at least 1".into()));
    }
    if cfg.workers < 1 {
        return Err(Error::Validation("workers must be at least 1".into()));
    }
    property.validate_constraint()?;
    if property.max_output_index() >= net.output_dim() {
        return Err(Error::Structural(format!(
            "property '{}' refers to output {} but network has {} outputs",
            property.id,
            property.max_output_index(),
            net.output_dim()
        )));
    }
    for root in roots {
        if root.dim() != net.input_dim() {
            return Err(Error::Structural(format!(
                "work box dimension {} does not match network input_dim {}",
                root.dim(),
                net.input_dim()
            )));
        }
    }
    let start = Instant::now();
    let domain_widths: Vec<f64> = property.input_box.dims.iter().map(Interval::width).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Validation(format!("cannot build worker pool: {}", e)))?;

    let mut report = VerificationReport {
        property_id: property.id.clone(),
        net_hash: net.hash(),
        mode: cfg.mode,
        max_depth: cfg.max_depth,
        total_volume: roots.iter().map(IntervalBox::volume).sum(),
        holds_volume: 0.0,
        violated_volume: 0.0,
        unknown_volume: 0.0,
        violating_boxes: Vec::new(),
        unknown_boxes: Vec::new(),
        boxes_processed: 0,
        max_depth_reached: 0,
        wall_time_ms: 0.0,
    };

    let mut frontier: Vec<IntervalBox> = roots.to_vec();
    let mut depth = 0;
    while !frontier.is_empty() {
        report.max_depth_reached = depth;
        report.boxes_processed += frontier.len();
        // level-synchronous: judge the whole frontier in parallel, merge in order
        let verdicts: Vec<Result<Verdict>> = pool.install(|| {
            frontier
                .par_iter()
                .map(|sub| judge(net, sub, &property.constraint, cfg.mode))
                .collect()
        });
        let mut next = Vec::new();
        for (sub, verdict) in frontier.into_iter().zip(verdicts) {
            match verdict? {
                Verdict::Holds => report.holds_volume += sub.volume(),
                Verdict::Violated => {
                    report.violated_volume += sub.volume();
                    report.violating_boxes.push(sub);
                }
                Verdict::Unknown => {
                    if depth < cfg.max_depth {
                        let children = sub.bisect(&domain_widths);
                        if children.len() == 1 {
                            // atomic box, cannot refine further
                            report.unknown_volume += sub.volume();
                            report.unknown_boxes.push(sub);
                        } else {
                            next.extend(children);
                        }
                    } else {
                        report.unknown_volume += sub.volume();
                        report.unknown_boxes.push(sub);
                    }
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    report.violating_boxes.sort_by(|a, b| a.cmp_lex(b));
    report.unknown_boxes.sort_by(|a, b| a.cmp_lex(b));
    report.wall_time_ms = start.elapsed().as_secs_f64() * 1000.0;
    Ok(report)
}
