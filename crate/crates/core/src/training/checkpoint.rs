//! Text checkpoints.
//!
//! ```text
//! #ckpt v1
//! config <model config as one-line JSON>
//! param <name> <d1>x<d2>... <values...>
//! ...
//! <optional embedded speaker bank, starting with its own #skb header>
//! ```
//!
//! Parameters are written in name order with round-trip float formatting,
//! so identical parameters always give identical bytes.

use std::path::{Path, PathBuf};

use crate::error::{contract_err, read_file, write_file, Error, Result};
use crate::numerics::Tensor;
use crate::params::ParamStore;
use crate::speaker::SpeakerKnowledgeBlock;
use crate::transformer::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub skb: Option<SpeakerKnowledgeBlock>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = String::from("#ckpt v1\n");
        s.push_str("config ");
        s.push_str(&serde_json::to_string(&self.config).expect("config serializes"));
        s.push('\n');
        for (name, t) in self.params.iter() {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            s.push_str(&format!("param {name} {}", shape.join("x")));
            for v in t.data() {
                s.push_str(&format!(" {v:?}"));
            }
            s.push('\n');
        }
        if let Some(skb) = &self.skb {
            s.push_str(&skb.to_text());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fmt = |line: usize, msg: String| Error::Format(format!("checkpoint line {line}: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("#ckpt v1") {
            return Err(fmt(1, "expected `#ckpt v1` header".into()));
        }
        let config_line = lines.next().and_then(|l| l.strip_prefix("config ")).ok_or_else(|| fmt(2, "expected config line".into()))?;
        let config: ModelConfig = serde_json::from_str(config_line).map_err(|e| fmt(2, e.to_string()))?;
        let mut params = ParamStore::new();
        let mut skb = None;
        for (i, line) in text.lines().enumerate().skip(2) {
            if line.starts_with("#skb") {
                let rest: Vec<&str> = text.lines().skip(i).collect();
                skb = Some(SpeakerKnowledgeBlock::parse(&rest.join("\n"))?);
                break;
            }
            let Some(rest) = line.strip_prefix("param ") else {
                return Err(fmt(i + 1, format!("unexpected record {:?}", line.split_whitespace().next().unwrap_or(""))));
            };
            let mut fields = rest.split_whitespace();
            let name = fields.next().ok_or_else(|| fmt(i + 1, "missing parameter name".into()))?;
            let shape = fields
                .next()
                .ok_or_else(|| fmt(i + 1, "missing shape".into()))?
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| fmt(i + 1, format!("bad shape for `{name}`"))))
                .collect::<Result<Vec<usize>>>()?;
            let values = fields
                .map(|v| v.parse::<f64>().map_err(|_| fmt(i + 1, format!("bad value in `{name}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if params.contains(name) {
                return Err(fmt(i + 1, format!("parameter `{name}` appears twice")));
            }
            params.insert(name, Tensor::new(&shape, values).map_err(|e| fmt(i + 1, e.to_string()))?);
        }
        Ok(Checkpoint { config, params, skb })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_text())
    }
}

/// Element-wise mean of several parameter sets with identical layout,
/// accumulated as a running mean so equal inputs average to themselves
/// exactly.
pub fn average_params(sets: &[&ParamStore]) -> Result<ParamStore> {
    let (first, rest) = sets.split_first().ok_or_else(|| contract_err!("nothing to average"))?;
    let mut mean = (*first).clone();
    for (k, other) in rest.iter().enumerate() {
        if !mean.same_layout(other) {
            return Err(contract_err!("checkpoint {} has different parameter names or shapes", k + 1));
        }
        let n = (k + 2) as f64;
        for (name, t) in mean.iter_mut() {
            let o = other.get(name)?;
            for (m, x) in t.data_mut().iter_mut().zip(o.data()) {
                *m += (x - *m) / n;
            }
        }
    }
    mean.clear_grads();
    Ok(mean)
}

pub fn average_checkpoints(ckpts: &[Checkpoint]) -> Result<Checkpoint> {
    let first = ckpts.first().ok_or_else(|| contract_err!("nothing to average"))?;
    if ckpts.iter().any(|c| c.config != first.config || c.skb != first.skb) {
        return Err(contract_err!("checkpoints disagree on model configuration or speaker bank"));
    }
    let sets: Vec<&ParamStore> = ckpts.iter().map(|c| &c.params).collect();
    Ok(Checkpoint { config: first.config.clone(), params: average_params(&sets)?, skb: first.skb.clone() })
}

pub fn average_checkpoint_files(paths: &[PathBuf]) -> Result<Checkpoint> {
    let ckpts = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    average_checkpoints(&ckpts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::SpeechTransformer;

    fn toy(seed: u64) -> Checkpoint {
        let cfg = ModelConfig::toy();
        let params = SpeechTransformer::new(cfg.clone()).unwrap().init_params(seed);
        let vecs = vec![vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![-1.0, 0.0, 2.5, 1e-3, 7.0]];
        let skb = SpeakerKnowledgeBlock::new(vec!["a".into(), "b".into()], vecs, "test").unwrap();
        Checkpoint { config: cfg, params, skb: Some(skb) }
    }

    #[test]
    fn text_round_trip_is_byte_exact() {
        let c = toy(1);
        let text = c.to_text();
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
        let mut bare = c.clone();
        bare.skb = None;
        assert_eq!(Checkpoint::parse(&bare.to_text()).unwrap(), bare);
    }

    #[test]
    fn averaging_identical_checkpoints_is_identity() {
        let c = toy(2);
        for k in 1..=5 {
            let avg = average_checkpoints(&vec![c.clone(); k]).unwrap();
            assert_eq!(avg.to_text(), c.to_text());
        }
    }

    #[test]
    fn opposite_checkpoints_average_to_zero() {
        let a = toy(3);
        let mut b = a.clone();
        for (_, t) in b.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = -*v);
        }
        let avg = average_checkpoints(&[a, b]).unwrap();
        assert!(avg.params.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn averaging_is_elementwise_mean() {
        let (a, b, c) = (toy(4), toy(5), toy(6));
        let avg = average_checkpoints(&[a.clone(), b.clone(), c.clone()]).unwrap();
        for (name, t) in avg.params.iter() {
            for (i, v) in t.data().iter().enumerate() {
                let want = (a.params.get(name).unwrap().data()[i] + b.params.get(name).unwrap().data()[i] + c.params.get(name).unwrap().data()[i]) / 3.0;
                assert!((v - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn record_order_does_not_matter() {
        let (a, b) = (toy(7), toy(8));
        let shuffle = |c: &Checkpoint| {
            let text = c.to_text();
            let lines: Vec<&str> = text.lines().collect();
            let n_params = c.params.len();
            let mut params: Vec<&str> = lines[2..2 + n_params].to_vec();
            params.reverse();
            params.rotate_left(3);
            let mut out: Vec<&str> = lines[..2].to_vec();
            out.extend(params);
            out.extend(&lines[2 + n_params..]);
            Checkpoint::parse(&(out.join("\n") + "\n")).unwrap()
        };
        let direct = average_checkpoints(&[a.clone(), b.clone()]).unwrap();
        let permuted = average_checkpoints(&[shuffle(&a), shuffle(&b)]).unwrap();
        assert_eq!(direct.to_text(), permuted.to_text());
    }

    #[test]
    fn mismatched_layouts_are_rejected() {
        let a = toy(1);
        let mut b = a.clone();
        b.params.insert("extra", Tensor::zeros(&[2]));
        assert!(matches!(average_checkpoints(&[a.clone(), b]), Err(crate::Error::Contract(_))));
        let mut c = a.clone();
        c.params.insert("input.b", Tensor::zeros(&[3]));
        assert!(average_checkpoints(&[a, c]).is_err());
        assert!(average_checkpoints(&[]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = toy(9);
        let paths: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("c{i}.ckpt"))).collect();
        for p in &paths {
            c.save(p).unwrap();
        }
        assert_eq!(average_checkpoint_files(&paths).unwrap().to_text(), c.to_text());
        let missing = average_checkpoint_files(&[dir.path().join("nope")]);
        assert!(matches!(missing, Err(crate::Error::Io { .. })));
        assert!(matches!(Checkpoint::parse("#ckpt v1\nconfig {}\n"), Err(crate::Error::Format(_))));
    }
}
