//! Text checkpoints holding named parameter stacks. Values are written as the
//! hex of their IEEE-754 bits so a save/load round trip is bit-exact.
//!
//! ```text
//! relkd-checkpoint 1
//! section encoder
//! activations tanh
//! layer 2 128
//! weight 3fb99999...
//! bias 0 ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Dense, Mat, MlpParams};

const MAGIC: &str = "relkd-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    sections: Vec<(String, MlpParams)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a named section.
    pub fn insert(&mut self, name: &str, params: MlpParams) -> Result<()> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid section name `{name}`")));
        }
        match self.sections.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = params,
            None => self.sections.push((name.to_string(), params)),
        }
        Ok(())
    }

    pub fn with(mut self, name: &str, params: MlpParams) -> Result<Self> {
        self.insert(name, params)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&MlpParams> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn require(&self, name: &str) -> Result<&MlpParams> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC} {VERSION}\n");
        for (name, p) in &self.sections {
            s.push_str(&section_text(name, p));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, head) = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing version".into()))?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }

        let mut ck = Checkpoint::new();
        let bad = |line: usize, msg: &str| Error::Checkpoint(format!("line {line}: {msg}"));
        while let Some((ln, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let name = line
                .strip_prefix("section ")
                .ok_or_else(|| bad(ln, "expected `section`"))?
                .trim()
                .to_string();
            let (ln, acts) = lines.next().ok_or_else(|| bad(ln, "truncated section"))?;
            let acts = acts
                .strip_prefix("activations")
                .ok_or_else(|| bad(ln, "expected `activations`"))?
                .split_whitespace()
                .map(|a| a.parse::<Activation>().map_err(|e| bad(ln, &e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let mut layers = Vec::new();
            loop {
                let (ln, line) = lines.next().ok_or_else(|| bad(ln, "missing `end`"))?;
                if line == "end" {
                    break;
                }
                let dims: Vec<usize> = line
                    .strip_prefix("layer ")
                    .ok_or_else(|| bad(ln, "expected `layer`"))?
                    .split_whitespace()
                    .map(|d| d.parse().map_err(|_| bad(ln, "bad layer shape")))
                    .collect::<Result<_>>()?;
                let [input, output] = dims[..] else {
                    return Err(bad(ln, "layer needs input and output widths"));
                };
                let (ln, w) = lines.next().ok_or_else(|| bad(ln, "missing weights"))?;
                let weight = parse_values(w, "weight", input * output).map_err(|m| bad(ln, &m))?;
                let (ln, b) = lines.next().ok_or_else(|| bad(ln, "missing bias"))?;
                let bias = parse_values(b, "bias", output).map_err(|m| bad(ln, &m))?;
                layers.push(Dense {
                    weight: Mat::from_vec(output, input, weight)?,
                    bias,
                });
            }
            let params = MlpParams::from_layers(layers, acts)
                .map_err(|e| Error::Checkpoint(format!("section `{name}`: {e}")))?;
            ck.insert(&name, params)?;
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn section_text(name: &str, p: &MlpParams) -> String {
    let mut s = format!("section {name}\nactivations");
    for a in p.activations() {
        let _ = write!(s, " {a}");
    }
    s.push('\n');
    for l in p.layers() {
        let _ = writeln!(s, "layer {} {}", l.input_width(), l.output_width());
        s.push_str("weight");
        for v in l.weight.as_slice() {
            let _ = write!(s, " {:x}", v.to_bits());
        }
        s.push_str("\nbias");
        for v in &l.bias {
            let _ = write!(s, " {:x}", v.to_bits());
        }
        s.push('\n');
    }
    s.push_str("end\n");
    s
}

fn parse_values(line: &str, tag: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let rest = line.strip_prefix(tag).ok_or_else(|| format!("expected `{tag}`"))?;
    let vals = rest
        .split_whitespace()
        .map(|h| {
            u64::from_str_radix(h, 16)
                .map(f64::from_bits)
                .map_err(|_| format!("bad {tag} value `{h}`"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if vals.len() != expected {
        return Err(format!("{tag} has {} values, expected {expected}", vals.len()));
    }
    Ok(vals)
}

/// SHA-256 of a parameter stack's serialized form, as lowercase hex.
pub fn params_digest(p: &MlpParams) -> String {
    let digest = Sha256::digest(section_text("params", p).as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn net(seed: u64) -> MlpParams {
        MlpParams::init(&[3, 5, 2], Activation::Relu, &mut RngStream::new(seed)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = net(1);
        let mut flat = p.to_flat();
        flat[0] = -0.0;
        flat[1] = f64::MIN_POSITIVE / 3.0;
        flat[2] = 1.0 / 3.0;
        p.set_flat(&flat).unwrap();
        let ck = Checkpoint::new()
            .with("encoder", p.clone())
            .unwrap()
            .with("predictor", MlpParams::identity(2))
            .unwrap();
        let back = Checkpoint::parse(&ck.to_text()).unwrap();
        assert_eq!(back.names().collect::<Vec<_>>(), ["encoder", "predictor"]);
        let q = back.require("encoder").unwrap();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(q.to_flat()), bits(p.to_flat()));
        assert_eq!(q.activations(), p.activations());
        assert_eq!(back.to_text(), ck.to_text());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Checkpoint::parse("").is_err());
        assert!(Checkpoint::parse("something else 1\n").is_err());
        assert!(Checkpoint::parse("relkd-checkpoint 9\n").is_err());
        let text = Checkpoint::new().with("e", net(2)).unwrap().to_text();
        let truncated: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::parse(&truncated).is_err());
        assert!(Checkpoint::new().require("missing").is_err());
    }

    #[test]
    fn digest_tracks_values() {
        let p = net(3);
        assert_eq!(params_digest(&p), params_digest(&p.clone()));
        let mut flat = p.to_flat();
        flat[4] = f64::from_bits(flat[4].to_bits() ^ 1);
        assert_ne!(params_digest(&p), params_digest(&p.with_flat(&flat).unwrap()));
    }
}
