//! Feedforward network representation shared by training, verification and shielding.
//!
//! A [`Network`] is an ordered stack of dense layers. Weights can be flattened into a
//! [`Genome`] (layer-major, rows-major, then bias) so evolutionary operators work on a
//! plain vector, and serialized to a diff-stable text format that round-trips bit-exactly.

use crate::error::{Error, Result};
use rand::Rng;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// One dense layer: `out = act(W x + b)`, weights stored row-major (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Structural("layer has no output rows".into()));
        }
        let in_dim = weights[0].len();
        if in_dim == 0 {
            return Err(Error::Structural("layer has zero input width".into()));
        }
        if weights.iter().any(|r| r.len() != in_dim) {
            return Err(Error::Structural("ragged weight matrix".into()));
        }
        if bias.len() != weights.len() {
            return Err(Error::Structural(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weights.len()
            )));
        }
        let finite = weights.iter().flatten().chain(bias.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Structural("non-finite layer parameter".into()));
        }
        Ok(Layer { weights, bias, activation })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn param_count(&self) -> usize {
        self.out_dim() * self.in_dim() + self.out_dim()
    }

    /// Pre-activation `W x + b`.
    pub fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Architecture of a network: enough to rebuild it from a flat genome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub input_dim: usize,
    /// (output width, activation) per layer.
    pub layers: Vec<(usize, Activation)>,
}

impl Arch {
    /// Conventional policy/value architecture: two ReLU layers of `hidden` units
    /// and a linear head.
    pub fn mlp(input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        Arch {
            input_dim,
            layers: vec![
                (hidden, Activation::Relu),
                (hidden, Activation::Relu),
                (output_dim, Activation::Linear),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        let mut in_dim = self.input_dim;
        let mut total = 0;
        for &(out, _) in &self.layers {
            total += out * in_dim + out;
            in_dim = out;
        }
        total
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|&(o, _)| o).unwrap_or(0)
    }
}

/// Immutable after construction; safe to share across parallel workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

/// Flat weight vector of a `Network`, the unit of mutation and crossover.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome(pub Vec<f64>);

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Structural("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Structural("network needs at least one layer".into()));
        }
        let mut expect = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != expect {
                return Err(Error::Structural(format!(
                    "layer {} expects input width {} but previous width is {}",
                    i,
                    layer.in_dim(),
                    expect
                )));
            }
            expect = layer.out_dim();
        }
        Ok(Network { input_dim, layers })
    }

    /// Random init, uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn init(arch: &Arch, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut in_dim = arch.input_dim;
        for &(out, act) in &arch.layers {
            let bound = 1.0 / (in_dim as f64).sqrt();
            let weights = (0..out)
                .map(|_| (0..in_dim).map(|_| rng.gen_range(-bound..=bound)).collect())
                .collect();
            let bias = (0..out).map(|_| rng.gen_range(-bound..=bound)).collect();
            layers.push(Layer { weights, bias, activation: act });
            in_dim = out;
        }
        Network { input_dim: arch.input_dim, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Trainer-only mutable access; widths must be preserved by the caller.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn arch(&self) -> Arch {
        Arch {
            input_dim: self.input_dim,
            layers: self.layers.iter().map(|l| (l.out_dim(), l.activation)).collect(),
        }
    }

    /// Deterministic forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(Error::Structural(format!(
                "input length {} does not match input_dim {}",
                input.len(),
                self.input_dim
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite network input".into()));
        }
        let mut cur = input.to_vec();
        for layer in &self.layers {
            cur = layer.affine(&cur);
            for v in &mut cur {
                *v = layer.activation.apply(*v);
            }
        }
        Ok(cur)
    }

    /// Canonical order: layer-major, weights row-major, then bias.
    pub fn flatten(&self) -> Genome {
        let mut values = Vec::with_capacity(self.arch().param_count());
        for layer in &self.layers {
            for row in &layer.weights {
                values.extend_from_slice(row);
            }
            values.extend_from_slice(&layer.bias);
        }
        Genome(values)
    }

    pub fn unflatten(arch: &Arch, genome: &Genome) -> Result<Self> {
        if genome.0.len() != arch.param_count() {
            return Err(Error::Structural(format!(
                "genome length {} does not match architecture parameter count {}",
                genome.0.len(),
                arch.param_count()
            )));
        }
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut in_dim = arch.input_dim;
        let mut pos = 0;
        for &(out, act) in &arch.layers {
            let mut weights = Vec::with_capacity(out);
            for _ in 0..out {
                weights.push(genome.0[pos..pos + in_dim].to_vec());
                pos += in_dim;
            }
            let bias = genome.0[pos..pos + out].to_vec();
            pos += out;
            layers.push(Layer { weights, bias, activation: act });
            in_dim = out;
        }
        Network::new(arch.input_dim, layers)
    }

    /// Diff-stable text encoding: fixed key order, shortest round-trip float form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "aquanet 1").unwrap();
        writeln!(s, "input_dim {}", self.input_dim).unwrap();
        writeln!(s, "layers {}", self.layers.len()).unwrap();
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(s, "layer {} {} {} {}", i, layer.activation.name(), layer.out_dim(), layer.in_dim())
                .unwrap();
            for row in &layer.weights {
                s.push('w');
                for v in row {
                    write!(s, " {:?}", v).unwrap();
                }
                s.push('\n');
            }
            s.push('b');
            for v in &layer.bias {
                write!(s, " {:?}", v).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut parser = TextParser::new(text);
        let header = parser.line()?;
        if header != ["aquanet", "1"] {
            return parser.fail("expected header 'aquanet 1'");
        }
        let input_dim = parser.keyed_usize("input_dim")?;
        let n_layers = parser.keyed_usize("layers")?;
        if n_layers == 0 {
            return parser.fail("network needs at least one layer");
        }
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let toks = parser.line()?;
            if toks.len() != 5 || toks[0] != "layer" {
                return parser.fail("expected 'layer <idx> <activation> <out> <in>'");
            }
            if toks[1] != i.to_string() {
                return parser.fail(&format!("expected layer index {}", i));
            }
            let activation = Activation::from_name(toks[2])
                .ok_or_else(|| parser.error(&format!("unknown activation '{}'", toks[2])))?;
            let out: usize = toks[3].parse().map_err(|_| parser.error("bad out width"))?;
            let in_dim: usize = toks[4].parse().map_err(|_| parser.error("bad in width"))?;
            let mut weights = Vec::with_capacity(out);
            for _ in 0..out {
                weights.push(parser.float_row("w", in_dim)?);
            }
            let bias = parser.float_row("b", out)?;
            layers.push(Layer::new(weights, bias, activation)?);
        }
        Network::new(input_dim, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// SHA-256 of the canonical text form; ties reports and shield indexes to a model.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        format!("{:x}", digest)
    }
}

/// Line-oriented parser that tracks byte offsets for error reporting.
struct TextParser<'a> {
    text: &'a str,
    offset: usize,
    line_start: usize,
}

impl<'a> TextParser<'a> {
    fn new(text: &'a str) -> Self {
        TextParser { text, offset: 0, line_start: 0 }
    }

    fn error(&self, message: &str) -> Error {
        Error::Parse { offset: self.line_start, message: message.into() }
    }

    fn fail<T>(&self, message: &str) -> Result<T> {
        Err(self.error(message))
    }

    fn line(&mut self) -> Result<Vec<&'a str>> {
        loop {
            if self.offset >= self.text.len() {
                return Err(Error::Parse {
                    offset: self.text.len(),
                    message: "unexpected end of file".into(),
                });
            }
            self.line_start = self.offset;
            let rest = &self.text[self.offset..];
            let end = rest.find('\n').map(|p| self.offset + p).unwrap_or(self.text.len());
            let line = &self.text[self.offset..end];
            self.offset = (end + 1).min(self.text.len());
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                return Ok(trimmed.split_whitespace().collect());
            }
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let toks = self.line()?;
        if toks.len() != 2 || toks[0] != key {
            return self.fail(&format!("expected '{} <n>'", key));
        }
        toks[1].parse().map_err(|_| self.error(&format!("bad value for {}", key)))
    }

    fn float_row(&mut self, tag: &str, expect: usize) -> Result<Vec<f64>> {
        let toks = self.line()?;
        if toks.first() != Some(&tag) {
            return self.fail(&format!("expected '{}' row", tag));
        }
        if toks.len() != expect + 1 {
            return self.fail(&format!("expected {} values in '{}' row, found {}", expect, tag, toks.len() - 1));
        }
        toks[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| self.error(&format!("bad float '{}'", t))))
            .collect()
    }
}
