//! Text checkpoint:
//!
//! ```text
//! trustlab-network 1
//! head softmax
//! layers 2
//! layer 4 8 relu
//! w <4*8 row-major values>
//! b <8 values>
//! layer 8 3 linear
//! ...
//! ```
//!
//! Floats use the shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Dense, Network, OutputHead};
use crate::error::{Error, Result};

const MAGIC: &str = "trustlab-network 1";

fn activation_name(a: Activation) -> String {
    match a {
        Activation::Relu => "relu".into(),
        Activation::LeakyRelu(s) => format!("leaky-relu:{s}"),
        Activation::Sigmoid => "sigmoid".into(),
        Activation::Linear => "linear".into(),
    }
}

fn join(values: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").expect("writing to a String");
    }
    s
}

/// Serializes a network to the text checkpoint format.
pub fn write_network(net: &Network) -> String {
    let mut out = String::new();
    let head = match net.head() {
        OutputHead::Softmax => "softmax",
        OutputHead::NormalizedSigmoid => "normalized-sigmoid",
    };
    writeln!(out, "{MAGIC}\nhead {head}\nlayers {}", net.layers().len()).unwrap();
    for l in net.layers() {
        writeln!(out, "layer {} {} {}", l.inputs(), l.outputs(), activation_name(l.activation)).unwrap();
        writeln!(out, "w {}", join(l.weights.iter().copied())).unwrap();
        writeln!(out, "b {}", join(l.bias.iter().copied())).unwrap();
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next line, which must start with `key`; returns the remainder.
    fn expect(&mut self, key: &str) -> Result<&'a str> {
        let (i, line) = self.inner.next().ok_or_else(|| self.err(format!("expected `{key}`, found end of file")))?;
        self.line = i + 1;
        let rest = line
            .strip_prefix(key)
            .ok_or_else(|| self.err(format!("expected `{key}`")))?;
        Ok(rest.trim())
    }

    fn floats(&self, text: &str, n: usize) -> Result<Vec<f64>> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| self.err(format!("bad number `{t}`: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", values.len())));
        }
        Ok(values)
    }
}

fn parse_activation(s: &str) -> Option<Activation> {
    match s {
        "relu" => Some(Activation::Relu),
        "sigmoid" => Some(Activation::Sigmoid),
        "linear" => Some(Activation::Linear),
        _ => s
            .strip_prefix("leaky-relu:")
            .and_then(|v| v.parse().ok())
            .map(Activation::LeakyRelu),
    }
}

/// Parses the text checkpoint format. `path` is only used in error messages.
pub fn parse_network(text: &str, path: &Path) -> Result<Network> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        path,
        line: 0,
    };
    if !lines.expect(MAGIC)?.is_empty() {
        return Err(lines.err("unexpected text after the header"));
    }
    let head = match lines.expect("head")? {
        "softmax" => OutputHead::Softmax,
        "normalized-sigmoid" => OutputHead::NormalizedSigmoid,
        other => return Err(lines.err(format!("unknown head `{other}`"))),
    };
    let count: usize = lines
        .expect("layers")?
        .parse()
        .map_err(|_| lines.err("bad layer count"))?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let spec: Vec<&str> = lines.expect("layer")?.split_whitespace().collect();
        let [inputs, outputs, act] = spec[..] else {
            return Err(lines.err("expected `layer <inputs> <outputs> <activation>`"));
        };
        let inputs: usize = inputs.parse().map_err(|_| lines.err("bad input size"))?;
        let outputs: usize = outputs.parse().map_err(|_| lines.err("bad output size"))?;
        let activation = parse_activation(act).ok_or_else(|| lines.err(format!("unknown activation `{act}`")))?;
        let w = lines.expect("w")?;
        let w = lines.floats(w, inputs * outputs)?;
        let b = lines.expect("b")?;
        let b = lines.floats(b, outputs)?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((inputs, outputs), w).expect("length checked"),
            bias: Array1::from(b),
            activation,
        });
    }
    Network::from_layers(layers, head)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_network(net))?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_network(&text, path)
}
