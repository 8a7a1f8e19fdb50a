use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::synth::{ErDensity, GraphFamily, MechanismFamily, NoiseFamily};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmDistributionSpec {
    pub d: usize,
    pub graph: GraphFamily,
    pub mechanism: MechanismFamily,
    pub noise: NoiseFamily,
    /// Graphs with fewer edges are redrawn.
    pub min_edges: usize,
}

impl ScmDistributionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(CoreError::Config(format!(
                "dimension {} must be at least 2",
                self.d
            )));
        }
        self.graph.validate()?;
        self.mechanism.validate()?;
        self.noise.validate()?;
        if self.min_edges > 0 && !self.graph.can_produce_edges(self.d) {
            return Err(CoreError::Config(format!(
                "{} graphs at d={} cannot reach {} edges",
                self.graph.tag(),
                self.d,
                self.min_edges
            )));
        }
        if self.min_edges > self.d * (self.d - 1) / 2 {
            return Err(CoreError::Config(format!(
                "{} edges do not fit in a DAG on {} nodes",
                self.min_edges, self.d
            )));
        }
        Ok(())
    }
}

/// A named family of SCM distributions sharing mechanism and noise
/// settings across several graph families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub graphs: Vec<GraphFamily>,
    pub mechanism: MechanismFamily,
    pub noise: NoiseFamily,
    pub min_edges: usize,
}

pub const PRESET_NAMES: [&str; 4] = ["LIN-IN", "RFF-IN", "LIN-OUT", "RFF-OUT"];

impl Preset {
    pub fn by_name(name: &str) -> Result<Self> {
        let upper = name.to_ascii_uppercase();
        let (mech, dist) = upper.split_once('-').ok_or_else(|| {
            CoreError::Config(format!(
                "unknown preset '{name}'; expected one of {PRESET_NAMES:?}"
            ))
        })?;
        let out_of_dist = match dist {
            "IN" => false,
            "OUT" => true,
            _ => {
                return Err(CoreError::Config(format!(
                    "unknown preset '{name}'; expected one of {PRESET_NAMES:?}"
                )))
            }
        };
        let mechanism = match (mech, out_of_dist) {
            ("LIN", false) => MechanismFamily::Linear {
                weight_lo: 0.5,
                weight_hi: 2.0,
                sign_flip: 0.5,
            },
            ("LIN", true) => MechanismFamily::Linear {
                weight_lo: 2.0,
                weight_hi: 4.0,
                sign_flip: 0.5,
            },
            ("RFF", false) => MechanismFamily::Rff {
                features: 64,
                length_scale: [1.0, 2.5],
                output_scale: [1.0, 2.0],
            },
            ("RFF", true) => MechanismFamily::Rff {
                features: 64,
                length_scale: [3.0, 5.0],
                output_scale: [2.0, 3.0],
            },
            _ => {
                return Err(CoreError::Config(format!(
                    "unknown preset '{name}'; expected one of {PRESET_NAMES:?}"
                )))
            }
        };
        let (graphs, noise) = if out_of_dist {
            (
                vec![
                    GraphFamily::WattsStrogatz { k: 2, rewire: 0.3 },
                    GraphFamily::StochasticBlock {
                        blocks: 2,
                        p_in: 0.6,
                        p_out: 0.1,
                    },
                ],
                NoiseFamily::LaplaceHeteroscedastic {
                    scale: 1.0,
                    offset: 0.5,
                    weight_range: 1.0,
                    min: 0.2,
                    max: 3.0,
                },
            )
        } else {
            (
                vec![
                    GraphFamily::ErdosRenyi {
                        density: ErDensity::ExpectedEdgesPerNode(1.0),
                    },
                    GraphFamily::ScaleFree { m: 1 },
                ],
                NoiseFamily::Gaussian { std: 1.0 },
            )
        };
        Ok(Self {
            name: format!("{mech}-{dist}"),
            graphs,
            mechanism,
            noise,
            min_edges: 1,
        })
    }

    pub fn spec(&self, d: usize, graph: usize) -> ScmDistributionSpec {
        ScmDistributionSpec {
            d,
            graph: self.graphs[graph].clone(),
            mechanism: self.mechanism.clone(),
            noise: self.noise.clone(),
            min_edges: self.min_edges,
        }
    }
}
