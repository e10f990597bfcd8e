//! Versioned plain-text flow checkpoints.
//!
//! ```text
//! advnf-checkpoint 1
//! dim 16
//! cond_dim 1
//! layers 8
//! hidden 128 128
//! masks checkerboard 4
//! base normal
//! projection sigmoid 0.0001
//! param layer0.trunk.0.weight 9 128
//! <one line of values per row>
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use advnf_core::flow::{Base, FlowConfig, FlowModel, MaskKind, Projection};
use advnf_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::csvio::fmt;
use crate::error::{AppError, AppResult};

pub const VERSION: u32 = 1;
const MAGIC: &str = "advnf-checkpoint";

pub fn to_string(model: &FlowModel) -> String {
    let c = model.config();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "dim {}", c.dim);
    let _ = writeln!(s, "cond_dim {}", c.cond_dim);
    let _ = writeln!(s, "layers {}", c.n_layers);
    let hidden: Vec<String> = c.hidden.iter().map(usize::to_string).collect();
    let _ = writeln!(s, "hidden {}", hidden.join(" "));
    match c.masks {
        MaskKind::Alternating => s.push_str("masks alternating\n"),
        MaskKind::Checkerboard { n } => {
            let _ = writeln!(s, "masks checkerboard {n}");
        }
    }
    match c.base {
        Base::Normal => s.push_str("base normal\n"),
        Base::Uniform { low, high } => {
            let _ = writeln!(s, "base uniform {} {}", fmt(low), fmt(high));
        }
    }
    match c.projection {
        Projection::None => s.push_str("projection none\n"),
        Projection::Sigmoid { alpha } => {
            let _ = writeln!(s, "projection sigmoid {}", fmt(alpha));
        }
        Projection::Tan { alpha } => {
            let _ = writeln!(s, "projection tan {}", fmt(alpha));
        }
    }
    for (name, t) in model.params().iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(s, "param {name} {}", shape.join(" "));
        let width = t.shape().last().copied().unwrap_or(1).max(1);
        for row in t.data().chunks(width) {
            let vals: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
    }
    s.push_str("end\n");
    s
}

pub fn save(path: &Path, model: &FlowModel) -> AppResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, to_string(model)).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> AppResult<FlowModel> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    from_str(&text).map_err(|detail| AppError::format(path, detail))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, Vec<&'a str>), String> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l.split_whitespace().collect()))
            .ok_or_else(|| "unexpected end of checkpoint".to_string())
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>, String> {
        let (ln, words) = self.next_line()?;
        match words.split_first() {
            Some((k, rest)) if *k == key => Ok(rest.to_vec()),
            _ => Err(format!("line {ln}: expected `{key}`")),
        }
    }
}

fn num<T: std::str::FromStr>(w: &str) -> Result<T, String> {
    w.parse().map_err(|_| format!("bad number {w:?}"))
}

fn one<T: std::str::FromStr>(words: &[&str]) -> Result<T, String> {
    match words {
        [w] => num(w),
        _ => Err(format!("expected one value, got {words:?}")),
    }
}

pub fn from_str(text: &str) -> Result<FlowModel, String> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let version: u32 = one(&lines.keyed(MAGIC).map_err(|_| "not an advnf checkpoint".to_string())?)?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version} (expected {VERSION})"));
    }
    let dim = one(&lines.keyed("dim")?)?;
    let cond_dim = one(&lines.keyed("cond_dim")?)?;
    let n_layers = one(&lines.keyed("layers")?)?;
    let hidden = lines.keyed("hidden")?.iter().map(|w| num(w)).collect::<Result<_, _>>()?;
    let masks = match lines.keyed("masks")?.as_slice() {
        ["alternating"] => MaskKind::Alternating,
        ["checkerboard", n] => MaskKind::Checkerboard { n: num(n)? },
        other => return Err(format!("unknown masks {other:?}")),
    };
    let base = match lines.keyed("base")?.as_slice() {
        ["normal"] => Base::Normal,
        ["uniform", lo, hi] => Base::Uniform {
            low: num(lo)?,
            high: num(hi)?,
        },
        other => return Err(format!("unknown base {other:?}")),
    };
    let projection = match lines.keyed("projection")?.as_slice() {
        ["none"] => Projection::None,
        ["sigmoid", a] => Projection::Sigmoid { alpha: num(a)? },
        ["tan", a] => Projection::Tan { alpha: num(a)? },
        other => return Err(format!("unknown projection {other:?}")),
    };
    let config = FlowConfig {
        dim,
        cond_dim,
        n_layers,
        hidden,
        masks,
        base,
        projection,
    };
    // parameters are overwritten below; the seed only fills the template
    let mut model = FlowModel::new(config, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    let expected = model.params().len();
    let mut seen = std::collections::HashSet::new();
    loop {
        let (ln, words) = lines.next_line()?;
        match words.split_first() {
            Some((&"end", [])) => break,
            Some((&"param", [name, shape @ ..])) => {
                let shape: Vec<usize> = shape.iter().map(|w| num(w)).collect::<Result<_, _>>()?;
                let numel: usize = shape.iter().product();
                let width = shape.last().copied().unwrap_or(1).max(1);
                let mut data = Vec::with_capacity(numel);
                while data.len() < numel {
                    let (ln, row) = lines.next_line()?;
                    if row.len() != width {
                        return Err(format!("line {ln}: expected {width} values"));
                    }
                    for w in row {
                        data.push(num::<f64>(w)?);
                    }
                }
                let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
                model
                    .params_mut()
                    .set(name, t)
                    .map_err(|e| format!("line {ln}: {e}"))?;
                if !seen.insert(name.to_string()) {
                    return Err(format!("line {ln}: duplicate parameter {name}"));
                }
            }
            _ => return Err(format!("line {ln}: expected `param` or `end`")),
        }
    }
    if seen.len() != expected {
        return Err(format!("checkpoint holds {} of {expected} parameters", seen.len()));
    }
    Ok(model)
}
