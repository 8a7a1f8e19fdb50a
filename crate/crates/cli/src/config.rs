//! Line-oriented `key = value` configuration with `[section]` headers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use fpscm::fip::{FipConfig, FipTrainConfig};
use fpscm::to::{ToEncoderConfig, ToTrainConfig};
use fpscm::{CoreError, Result};

/// Parsed sections in file order of keys; `#` and `;` start comments.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Ini {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                ini.sections.entry(name.clone()).or_default();
                section = Some(name);
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected key = value", no + 1)))?;
            let sec = section
                .as_ref()
                .ok_or_else(|| CoreError::Config(format!("line {}: key outside of a section", no + 1)))?;
            let prev = ini.sections.get_mut(sec).expect("section exists").insert(k.trim().to_string(), v.trim().to_string());
            if prev.is_some() {
                return Err(CoreError::Config(format!("line {}: duplicate key '{}'", no + 1, k.trim())));
            }
        }
        Ok(ini)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSection {
    pub preset: String,
    pub dims: Vec<usize>,
    pub count: usize,
    pub samples: usize,
    pub standardize: bool,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            preset: "LIN-IN".into(),
            dims: vec![5],
            count: 4,
            samples: 1000,
            standardize: false,
        }
    }
}

/// Transformer widths; `d` comes from the data at run time.
#[derive(Debug, Clone, PartialEq)]
pub struct FipSection {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    pub ln_eps: f64,
    pub tau: f64,
}

impl Default for FipSection {
    fn default() -> Self {
        let c = FipConfig::desk(1);
        Self {
            embed_dim: c.embed_dim,
            layers: c.layers,
            heads: c.heads,
            head_dim: c.head_dim,
            mlp_hidden: c.mlp_hidden,
            ln_eps: c.ln_eps,
            tau: c.tau,
        }
    }
}

impl FipSection {
    pub fn model(&self, d: usize) -> FipConfig {
        FipConfig {
            d,
            embed_dim: self.embed_dim,
            layers: self.layers,
            heads: self.heads,
            head_dim: self.head_dim,
            mlp_hidden: self.mlp_hidden,
            tau: self.tau,
            ln_eps: self.ln_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub n_interventions: usize,
    pub per_intervention: usize,
    pub reference_samples: usize,
    pub generate_samples: usize,
    /// Rows used to average Jacobians for graph extraction.
    pub graph_rows: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_interventions: 10,
            per_intervention: 100,
            reference_samples: 1000,
            generate_samples: 10_000,
            graph_rows: 2000,
        }
    }
}

/// Every option of every command, resolved from defaults, then the config
/// file, then command-line flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenSection,
    pub fip: FipSection,
    pub fip_train: FipTrainConfig,
    pub to_encoder: ToEncoderConfig,
    pub to_train: ToTrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gen: GenSection::default(),
            fip: FipSection::default(),
            fip_train: FipTrainConfig::desk(),
            to_encoder: ToEncoderConfig::default(),
            to_train: ToTrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CoreError::Config(format!("[{section}] {key}: cannot parse '{v}'")))
}

pub fn parse_list(section: &str, key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse(section, key, s.trim())).collect()
}

fn parse_opt(section: &str, key: &str, v: &str) -> Result<Option<usize>> {
    if v.eq_ignore_ascii_case("auto") || v.is_empty() {
        Ok(None)
    } else {
        parse(section, key, v).map(Some)
    }
}

fn opt_str(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    pub fn apply(&mut self, ini: &Ini) -> Result<()> {
        for (section, entries) in &ini.sections {
            for (key, v) in entries {
                self.set(section, key, v)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let s = section;
        match (section, key) {
            ("run", "seed") => self.seed = parse(s, key, v)?,
            ("gen-data", "preset") => self.gen.preset = v.to_string(),
            ("gen-data", "dims") => self.gen.dims = parse_list(s, key, v)?,
            ("gen-data", "count") => self.gen.count = parse(s, key, v)?,
            ("gen-data", "samples") => self.gen.samples = parse(s, key, v)?,
            ("gen-data", "standardize") => self.gen.standardize = parse(s, key, v)?,
            ("fip", "embed_dim") => self.fip.embed_dim = parse(s, key, v)?,
            ("fip", "layers") => self.fip.layers = parse(s, key, v)?,
            ("fip", "heads") => self.fip.heads = parse(s, key, v)?,
            ("fip", "head_dim") => self.fip.head_dim = parse(s, key, v)?,
            ("fip", "mlp_hidden") => self.fip.mlp_hidden = parse(s, key, v)?,
            ("fip", "ln_eps") => self.fip.ln_eps = parse(s, key, v)?,
            ("fip", "tau") => self.fip.tau = parse(s, key, v)?,
            ("fip-train", "epochs") => self.fip_train.epochs = parse(s, key, v)?,
            ("fip-train", "lr") => self.fip_train.lr = parse(s, key, v)?,
            ("fip-train", "weight_decay") => self.fip_train.weight_decay = parse(s, key, v)?,
            ("fip-train", "batch_size") => self.fip_train.batch_size = parse_opt(s, key, v)?,
            ("fip-train", "cosine_decay") => self.fip_train.cosine_decay = parse(s, key, v)?,
            ("to-encoder", "embed_dim") => self.to_encoder.embed_dim = parse(s, key, v)?,
            ("to-encoder", "heads") => self.to_encoder.heads = parse(s, key, v)?,
            ("to-encoder", "blocks") => self.to_encoder.blocks = parse(s, key, v)?,
            ("to-encoder", "mlp_hidden") => self.to_encoder.mlp_hidden = parse(s, key, v)?,
            ("to-encoder", "ln_eps") => self.to_encoder.ln_eps = parse(s, key, v)?,
            ("to-train", "d_max") => self.to_train.d_max = parse_opt(s, key, v)?,
            ("to-train", "batch") => self.to_train.batch = parse(s, key, v)?,
            ("to-train", "epochs") => self.to_train.epochs = parse(s, key, v)?,
            ("to-train", "lr") => self.to_train.lr = parse(s, key, v)?,
            ("to-train", "weight_decay") => self.to_train.weight_decay = parse(s, key, v)?,
            ("eval", "n_interventions") => self.eval.n_interventions = parse(s, key, v)?,
            ("eval", "per_intervention") => self.eval.per_intervention = parse(s, key, v)?,
            ("eval", "reference_samples") => self.eval.reference_samples = parse(s, key, v)?,
            ("eval", "generate_samples") => self.eval.generate_samples = parse(s, key, v)?,
            ("eval", "graph_rows") => self.eval.graph_rows = parse(s, key, v)?,
            _ => return Err(CoreError::Config(format!("unknown key '{key}' in section [{section}]"))),
        }
        Ok(())
    }

    /// Checks the values no command could run with.
    pub fn validate(&self) -> Result<()> {
        self.fip_train.validate()?;
        self.to_encoder.validate()?;
        self.to_train.validate()?;
        self.fip.model(1).validate()?;
        if self.gen.dims.is_empty() || self.gen.dims.contains(&0) {
            return Err(CoreError::Config("[gen-data] dims must be positive".into()));
        }
        Ok(())
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let f = &self.fip;
        let ft = &self.fip_train;
        let te = &self.to_encoder;
        let tt = &self.to_train;
        let e = &self.eval;
        let g = &self.gen;
        let dims: Vec<String> = g.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "[run]\nseed = {}\n", self.seed);
        let _ = writeln!(
            out,
            "[gen-data]\npreset = {}\ndims = {}\ncount = {}\nsamples = {}\nstandardize = {}\n",
            g.preset,
            dims.join(","),
            g.count,
            g.samples,
            g.standardize
        );
        let _ = writeln!(
            out,
            "[fip]\nembed_dim = {}\nlayers = {}\nheads = {}\nhead_dim = {}\nmlp_hidden = {}\nln_eps = {:?}\ntau = {:?}\n",
            f.embed_dim, f.layers, f.heads, f.head_dim, f.mlp_hidden, f.ln_eps, f.tau
        );
        let _ = writeln!(
            out,
            "[fip-train]\nepochs = {}\nlr = {:?}\nweight_decay = {:?}\nbatch_size = {}\ncosine_decay = {}\n",
            ft.epochs,
            ft.lr,
            ft.weight_decay,
            opt_str(ft.batch_size),
            ft.cosine_decay
        );
        let _ = writeln!(
            out,
            "[to-encoder]\nembed_dim = {}\nheads = {}\nblocks = {}\nmlp_hidden = {}\nln_eps = {:?}\n",
            te.embed_dim, te.heads, te.blocks, te.mlp_hidden, te.ln_eps
        );
        let _ = writeln!(
            out,
            "[to-train]\nd_max = {}\nbatch = {}\nepochs = {}\nlr = {:?}\nweight_decay = {:?}\n",
            opt_str(tt.d_max),
            tt.batch,
            tt.epochs,
            tt.lr,
            tt.weight_decay
        );
        let _ = write!(
            out,
            "[eval]\nn_interventions = {}\nper_intervention = {}\nreference_samples = {}\ngenerate_samples = {}\ngraph_rows = {}\n",
            e.n_interventions, e.per_intervention, e.reference_samples, e.generate_samples, e.graph_rows
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.gen.dims = vec![3, 7];
        c.to_train.d_max = Some(2);
        c.fip_train.lr = 0.1 + 0.2;
        let mut back = RunConfig::default();
        back.apply(&Ini::parse(&c.to_ini()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = RunConfig::default();
        assert!(c.apply(&Ini::parse("[fip]\nwidth = 3").unwrap()).is_err());
        assert!(c.apply(&Ini::parse("[nope]\nseed = 3").unwrap()).is_err());
        assert!(c.apply(&Ini::parse("[run]\nseed = x").unwrap()).is_err());
        assert!(Ini::parse("seed = 1").is_err());
        assert!(Ini::parse("[run]\nseed").is_err());
        assert!(Ini::parse("[run]\nseed = 1\nseed = 2").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let ini = Ini::parse("# top\n\n[run]\nseed = 4 ; trailing\n").unwrap();
        assert_eq!(ini.sections["run"]["seed"], "4");
    }
}
