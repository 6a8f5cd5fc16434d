//! Plain-text model checkpoints.
//!
//! ```text
//! microseg-checkpoint 1
//! input_size 64
//! widths 16 32 32 16 32
//! aspp_dilations 1 2 4
//! init_seed 42
//! sites ReLU,PReLU,...
//! param stem.weight 16 3 3 3
//! <values separated by spaces>
//! ...
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip float notation, so loading
//! reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::model::{ActivationAssignment, Model, NetworkConfig, Widths};
use crate::tensor::{Scalar, Shape};

const MAGIC: &str = "microseg-checkpoint";
const VERSION: u32 = 1;

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn to_string<F: Scalar>(model: &Model<F>) -> String {
    let cfg = model.config();
    let w = &cfg.widths;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "input_size {}", cfg.input_size);
    let _ = writeln!(out, "widths {}", join([w.stem, w.down1, w.down2, w.aspp, w.fuse]));
    let _ = writeln!(out, "aspp_dilations {}", join(cfg.aspp_dilations.iter()));
    let _ = writeln!(out, "init_seed {}", model.init_seed());
    let _ = writeln!(out, "sites {}", model.assignment());
    for (name, t) in model.params() {
        let s = t.shape();
        let _ = writeln!(out, "param {name} {} {} {} {}", s.n, s.c, s.h, s.w);
        let _ = writeln!(out, "{}", join(t.data().iter()));
    }
    out.push_str("end\n");
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn numbers<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad {what} value {t:?}"))))
        .collect()
}

pub fn from_str<F: Scalar>(text: &str) -> Result<Model<F>> {
    let mut lines = text.lines();
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected {key:?}, found {line:?}")))
    };
    let version = field(MAGIC)?;
    if version != VERSION.to_string() {
        return Err(bad(format!("unsupported version {version}")));
    }
    let input_size = numbers::<usize>(&field("input_size")?, "input_size")?;
    let widths = numbers::<usize>(&field("widths")?, "widths")?;
    let dilations = numbers::<usize>(&field("aspp_dilations")?, "aspp_dilations")?;
    let init_seed = numbers::<u64>(&field("init_seed")?, "init_seed")?;
    let sites = field("sites")?
        .split(',')
        .map(str::parse::<ActivationKind>)
        .collect::<Result<Vec<_>>>()?;
    if input_size.len() != 1 || widths.len() != 5 || init_seed.len() != 1 {
        return Err(bad("malformed header"));
    }
    let config = NetworkConfig {
        input_size: input_size[0],
        widths: Widths {
            stem: widths[0],
            down1: widths[1],
            down2: widths[2],
            aspp: widths[3],
            fuse: widths[4],
        },
        aspp_dilations: dilations,
    };
    let mut model = Model::<F>::build(&config, &ActivationAssignment(sites), init_seed[0])?;

    let mut loaded = 0;
    let param_count = model.params().len();
    {
        let mut params = model.params_mut();
        loop {
            let line = lines.next().ok_or_else(|| bad("missing end marker"))?;
            if line == "end" {
                break;
            }
            let rest = line
                .strip_prefix("param ")
                .ok_or_else(|| bad(format!("expected param line, found {line:?}")))?;
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("param without name"))?;
            let dims = numbers::<usize>(&parts.collect::<Vec<_>>().join(" "), "shape")?;
            let values = numbers::<F>(lines.next().unwrap_or(""), name)?;
            let (_, target) = params
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| bad(format!("unknown parameter {name}")))?;
            if dims.len() != 4 || Shape::new(dims[0], dims[1], dims[2], dims[3]) != target.shape() {
                return Err(bad(format!("{name}: shape {dims:?} does not match {}", target.shape())));
            }
            if values.len() != target.len() {
                return Err(bad(format!("{name}: expected {} values, got {}", target.len(), values.len())));
            }
            target.data_mut().copy_from_slice(&values);
            loaded += 1;
        }
    }
    if loaded != param_count {
        return Err(bad(format!("expected {param_count} parameters, found {loaded}")));
    }
    Ok(model)
}

pub fn save<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load<F: Scalar>(path: &Path) -> Result<Model<F>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::default_pool;
    use crate::model::{assign_activations, SelectionMode};

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetworkConfig::default();
        let asg = assign_activations(SelectionMode::Sto, &default_pool(), 7, 0, 77).unwrap();
        let mut m = Model::<f32>::build(&cfg, &asg, 1234).unwrap();
        // Perturb activation parameters away from their init values.
        for (i, (_, t)) in m.params_mut().into_iter().enumerate() {
            for v in t.data_mut() {
                *v += (i as f32 + 1.0) * 1e-7;
            }
        }
        let text = to_string(&m);
        let back: Model<f32> = from_str(&text).unwrap();
        assert_eq!(back, m);
        for ((_, a), (_, b)) in back.params().iter().zip(m.params()) {
            let bits = |t: &crate::tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(to_string(&back), text);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let m = Model::<f32>::build(
            &NetworkConfig::reduced(),
            &ActivationAssignment::uniform(ActivationKind::Prelu, 7),
            1,
        )
        .unwrap();
        let text = to_string(&m);
        assert!(from_str::<f32>(&text.replace("microseg-checkpoint 1", "microseg-checkpoint 9")).is_err());
        assert!(from_str::<f32>(&text.replace("\nend\n", "\n")).is_err());
        assert!(from_str::<f32>(&text.replace("PReLU", "Sigmoid")).is_err());
        let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(from_str::<f32>(&truncated).is_err());
    }
}
