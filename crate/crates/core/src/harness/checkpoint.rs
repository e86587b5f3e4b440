//! Plain-text checkpoints. Floats use Rust's shortest round-trip formatting,
//! so save followed by load reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::PolicyParams;
use crate::error::{Error, Result};
use crate::numerics::{Activation, Mlp, OutputTransform};
use crate::rnet::{ComparatorKind, RNetArch, RNetwork};

pub const CHECKPOINT_HEADER: &str = "ecw-checkpoint/1";

fn write_values(out: &mut String, values: &[f64]) {
    let _ = writeln!(out, "params {}", values.len());
    for chunk in values.chunks(8) {
        let line: Vec<String> = chunk.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out.push_str("end\n");
}

pub fn policy_to_text(p: &PolicyParams) -> String {
    let mut s = format!("{CHECKPOINT_HEADER}\nkind policy\n");
    let sizes: Vec<String> = p.mlp().sizes().iter().map(usize::to_string).collect();
    let _ = writeln!(s, "sizes {}", sizes.join(" "));
    let _ = writeln!(s, "num_actions {}", p.num_actions());
    write_values(&mut s, &p.mlp().flatten());
    s
}

pub fn rnet_to_text(net: &RNetwork) -> String {
    let a = net.arch();
    let mut s = format!("{CHECKPOINT_HEADER}\nkind rnet\n");
    let _ = writeln!(s, "input_dim {}", net.input_dim());
    let _ = writeln!(s, "embedding_dim {}", a.embedding_dim);
    let _ = writeln!(s, "embed_hidden {}", a.embed_hidden);
    let _ = writeln!(s, "comparator_hidden {}", a.comparator_hidden);
    let _ = writeln!(s, "comparator {}", a.comparator.name());
    let _ = writeln!(s, "shared_branches {}", a.shared_branches);
    let _ = writeln!(s, "trained {}", net.trained);
    write_values(&mut s, &net.flatten());
    s
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    origin: &'a Path,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, origin: &'a Path, kind: &str) -> Result<Self> {
        let mut p = Self {
            lines: text.lines().enumerate(),
            origin,
        };
        let header = p.next_line()?.1;
        if header != CHECKPOINT_HEADER {
            return Err(p.err(1, format!("expected header '{CHECKPOINT_HEADER}', found '{header}'")));
        }
        let found = p.field("kind")?;
        if found != kind {
            return Err(p.err(2, format!("checkpoint holds a {found}, expected a {kind}")));
        }
        Ok(p)
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::schema(self.origin, format!("line {line}: {msg}"))
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(n, l)| (n + 1, l.trim()))
            .ok_or_else(|| Error::schema(self.origin, "unexpected end of file"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let (n, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(self.err(n, format!("expected '{key} <value>', found '{line}'"))),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse()
            .map_err(|_| Error::schema(self.origin, format!("invalid value '{v}' for {key}")))
    }

    fn values(&mut self) -> Result<Vec<f64>> {
        let count: usize = self.parse("params")?;
        let mut out = Vec::with_capacity(count);
        loop {
            let (n, line) = self.next_line()?;
            if line == "end" {
                break;
            }
            for tok in line.split_whitespace() {
                out.push(
                    tok.parse()
                        .map_err(|_| self.err(n, format!("invalid number '{tok}'")))?,
                );
            }
        }
        if out.len() != count {
            return Err(Error::schema(
                self.origin,
                format!("declared {count} parameters, found {}", out.len()),
            ));
        }
        Ok(out)
    }
}

pub fn policy_from_text(text: &str, origin: &Path) -> Result<PolicyParams> {
    let mut p = Parser::new(text, origin, "policy")?;
    let sizes: Vec<usize> = p
        .field("sizes")?
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::schema(origin, format!("invalid layer size '{t}'")))
        })
        .collect::<Result<_>>()?;
    let num_actions: usize = p.parse("num_actions")?;
    let values = p.values()?;
    let mut net = Mlp::new(
        &sizes,
        Activation::Relu,
        OutputTransform::Identity,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    net.load_flat(&values)?;
    PolicyParams::from_mlp(net, num_actions)
}

pub fn rnet_from_text(text: &str, origin: &Path) -> Result<RNetwork> {
    let mut p = Parser::new(text, origin, "rnet")?;
    let input_dim: usize = p.parse("input_dim")?;
    let arch = RNetArch {
        embedding_dim: p.parse("embedding_dim")?,
        embed_hidden: p.parse("embed_hidden")?,
        comparator_hidden: p.parse("comparator_hidden")?,
        comparator: ComparatorKind::parse(p.field("comparator")?)?,
        shared_branches: p.parse("shared_branches")?,
    };
    let trained: bool = p.parse("trained")?;
    let values = p.values()?;
    let mut net = RNetwork::new(input_dim, arch, &mut ChaCha8Rng::seed_from_u64(0))?;
    net.load_flat(&values)?;
    net.trained = trained;
    Ok(net)
}

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    policy_from_text(&text, path)
}

pub fn load_rnet(path: &Path) -> Result<RNetwork> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    rnet_from_text(&text, path)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), shared in any::<bool>(), dot in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let arch = RNetArch {
                embedding_dim: 4,
                embed_hidden: 6,
                comparator_hidden: 5,
                comparator: if dot { ComparatorKind::DotSigmoid } else { ComparatorKind::ConcatMlp },
                shared_branches: shared,
            };
            let mut net = RNetwork::new(7, arch, &mut rng).unwrap();
            net.trained = seed % 2 == 0;
            let back = rnet_from_text(&rnet_to_text(&net), Path::new("r")).unwrap();
            prop_assert_eq!(back.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            net.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.arch(), net.arch());
            prop_assert_eq!(back.trained, net.trained);

            let pol = PolicyParams::new(7, 3, 5, &mut rng).unwrap();
            let back = policy_from_text(&policy_to_text(&pol), Path::new("p")).unwrap();
            prop_assert_eq!(back, pol);
        }
    }

    #[test]
    fn wrong_kind_and_truncation_are_schema_errors() {
        let pol = PolicyParams::new(3, 2, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let text = policy_to_text(&pol);
        let err = rnet_from_text(&text, Path::new("p.ckpt")).unwrap_err();
        assert_eq!(err.kind(), "schema");
        let cut: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert_eq!(
            policy_from_text(&cut, Path::new("p.ckpt")).unwrap_err().kind(),
            "schema"
        );
        assert!(policy_from_text(&text.replace(CHECKPOINT_HEADER, "ecw-checkpoint/0"), Path::new("p")).is_err());
    }
}
