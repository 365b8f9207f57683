//! Declarative model descriptions.
//!
//! A model is written as a TOML document with a `[[params]]` array declaring
//! named parameter tensors and a `[[nodes]]` array declaring the network in
//! any order (parents are referenced by name):
//!
//! ```toml
//! [[params]]
//! name = "w"
//! shape = [1, 1]
//!
//! [[nodes]]
//! name = "z"
//! kind = "latent"
//! dim = 1
//! family = "gaussian"
//! scale = 1.0
//!
//! [[nodes]]
//! name = "x"
//! kind = "observed"
//! dim = 1
//! parents = ["z"]
//! family = "gaussian"
//! scale = { log_param = "log_sigma_x" }
//! link = { kind = "affine", weight = "w", bias = [0.0] }
//! ```
//!
//! Root nodes default to a zero-constant link and non-roots to the identity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    Activation, ConditionalFactor, DeterministicFn, FactorGraphModel, Family, LinkFn, NodeKind, NodeSpec, ParamLayout,
    ScaleSource, TensorSource,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindDesc {
    Latent,
    Observed,
    Auxiliary,
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyDesc {
    Gaussian,
    Uniform,
    Exponential,
    Lognormal,
    Bernoulli,
    StandardNormal,
    UnitUniform,
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationDesc {
    #[default]
    Identity,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TensorDesc {
    Param(String),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleDesc {
    Value(f64),
    LogParam { log_param: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkDesc {
    Identity,
    Constant {
        value: TensorDesc,
    },
    Affine {
        #[serde(default)]
        activation: ActivationDesc,
        weight: TensorDesc,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<TensorDesc>,
    },
    Compose {
        stages: Vec<LinkDesc>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDesc {
    pub name: String,
    pub kind: KindDesc,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    pub family: FamilyDesc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkDesc>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    pub nodes: Vec<NodeDesc>,
}

/// A model description together with parameter values and observations,
/// as read by the `sample` subcommand.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    pub nodes: Vec<NodeDesc>,
    /// Parameter values by name; unnamed parameters are zero.
    #[serde(default)]
    pub theta: BTreeMap<String, Vec<f64>>,
    /// Observed values by node name.
    #[serde(default)]
    pub observed: BTreeMap<String, Vec<f64>>,
}

impl ModelFile {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            params: self.params.clone(),
            nodes: self.nodes.clone(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

impl ModelSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }
}

fn tensor(desc: &TensorDesc, layout: &ParamLayout) -> Result<TensorSource> {
    match desc {
        TensorDesc::Param(name) => layout
            .find(name)
            .map(TensorSource::Param)
            .ok_or_else(|| Error::UnknownParam(name.clone())),
        TensorDesc::Values(v) => Ok(TensorSource::Fixed(v.clone())),
    }
}

fn link(desc: &LinkDesc, layout: &ParamLayout) -> Result<LinkFn> {
    Ok(match desc {
        LinkDesc::Identity => LinkFn::Identity,
        LinkDesc::Constant { value } => LinkFn::Constant(tensor(value, layout)?),
        LinkDesc::Affine {
            activation,
            weight,
            bias,
        } => LinkFn::Affine {
            activation: match activation {
                ActivationDesc::Identity => Activation::Identity,
                ActivationDesc::Tanh => Activation::Tanh,
                ActivationDesc::Sigmoid => Activation::Sigmoid,
            },
            weight: tensor(weight, layout)?,
            bias: bias.as_ref().map(|b| tensor(b, layout)).transpose()?,
        },
        LinkDesc::Compose { stages } => {
            LinkFn::Compose(stages.iter().map(|s| link(s, layout)).collect::<Result<Vec<_>>>()?)
        }
    })
}

fn scale(desc: &Option<ScaleDesc>, node: &str, layout: &ParamLayout) -> Result<ScaleSource> {
    match desc {
        None => Err(Error::InvalidModel(format!("node `{node}` needs a `scale`"))),
        Some(ScaleDesc::Value(v)) => Ok(ScaleSource::Fixed(*v)),
        Some(ScaleDesc::LogParam { log_param }) => layout
            .find(log_param)
            .map(ScaleSource::LogParam)
            .ok_or_else(|| Error::UnknownParam(log_param.clone())),
    }
}

/// Validate a declarative description and build the model.
pub fn build_model(spec: &ModelSpec) -> Result<FactorGraphModel> {
    let mut layout = ParamLayout::new();
    for p in &spec.params {
        layout.push(&p.name, p.shape.clone())?;
    }
    let index: BTreeMap<&str, usize> = spec
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.name.as_str(), i))
        .collect();
    let mut nodes = Vec::with_capacity(spec.nodes.len());
    for d in &spec.nodes {
        let parents = d
            .parents
            .iter()
            .map(|p| {
                index
                    .get(p.as_str())
                    .map(|i| super::NodeId(*i))
                    .ok_or_else(|| Error::UnknownNode(p.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let family = match d.family {
            FamilyDesc::Gaussian => Family::Gaussian {
                scale: scale(&d.scale, &d.name, &layout)?,
            },
            FamilyDesc::Uniform => Family::Uniform {
                width: scale(&d.scale, &d.name, &layout)?,
            },
            FamilyDesc::Exponential => Family::Exponential,
            FamilyDesc::Lognormal => Family::LogNormal {
                scale: scale(&d.scale, &d.name, &layout)?,
            },
            FamilyDesc::Bernoulli => Family::Bernoulli,
            FamilyDesc::StandardNormal => Family::StandardNormalAux,
            FamilyDesc::UnitUniform => Family::UniformAux,
            FamilyDesc::Deterministic => Family::Deterministic(DeterministicFn::Link),
        };
        let link = match &d.link {
            Some(l) => link(l, &layout)?,
            None if parents.is_empty() => LinkFn::Constant(TensorSource::Fixed(vec![0.0; d.dim])),
            None => LinkFn::Identity,
        };
        let kind = match d.kind {
            KindDesc::Latent => NodeKind::Latent,
            KindDesc::Observed => NodeKind::Observed,
            KindDesc::Auxiliary => NodeKind::Auxiliary,
            KindDesc::Deterministic => NodeKind::Deterministic,
        };
        nodes.push(NodeSpec {
            name: d.name.clone(),
            kind,
            dim: d.dim,
            parents,
            factor: ConditionalFactor { family, link },
        });
    }
    FactorGraphModel::new(nodes, layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeId;

    fn gaussian(name: &str, kind: KindDesc, parents: &[&str]) -> NodeDesc {
        NodeDesc {
            name: name.into(),
            kind,
            dim: 1,
            parents: parents.iter().map(|s| s.to_string()).collect(),
            family: FamilyDesc::Gaussian,
            scale: Some(ScaleDesc::Value(1.0)),
            link: None,
        }
    }

    #[test]
    fn chain_has_unique_topological_order() {
        let spec = ModelSpec {
            params: vec![],
            nodes: vec![
                gaussian("x", KindDesc::Observed, &["z2"]),
                gaussian("z2", KindDesc::Latent, &["z1"]),
                gaussian("z1", KindDesc::Latent, &[]),
            ],
        };
        let m = build_model(&spec).unwrap();
        let names: Vec<&str> = m.topo_order().iter().map(|n| m.node(*n).name.as_str()).collect();
        assert_eq!(names, ["z1", "z2", "x"]);
    }

    #[test]
    fn observed_parent_is_rejected() {
        let spec = ModelSpec {
            params: vec![],
            nodes: vec![
                gaussian("x", KindDesc::Observed, &[]),
                gaussian("z", KindDesc::Latent, &["x"]),
            ],
        };
        assert_eq!(build_model(&spec), Err(Error::ObservedNotLeaf("x".into())));
    }

    #[test]
    fn two_cycle_is_rejected() {
        let spec = ModelSpec {
            params: vec![],
            nodes: vec![
                gaussian("a", KindDesc::Latent, &["b"]),
                gaussian("b", KindDesc::Latent, &["a"]),
            ],
        };
        assert!(matches!(build_model(&spec), Err(Error::Cycle(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut z = gaussian("z", KindDesc::Latent, &[]);
        z.dim = 2;
        let mut x = gaussian("x", KindDesc::Observed, &["z"]);
        x.link = Some(LinkDesc::Affine {
            activation: ActivationDesc::Identity,
            weight: TensorDesc::Values(vec![1.0; 5]),
            bias: None,
        });
        let spec = ModelSpec {
            params: vec![],
            nodes: vec![z, x],
        };
        assert!(matches!(build_model(&spec), Err(Error::Shape(_))));
    }

    #[test]
    fn unknown_references_are_rejected() {
        let spec = ModelSpec {
            params: vec![],
            nodes: vec![gaussian("z", KindDesc::Latent, &["nope"])],
        };
        assert_eq!(build_model(&spec), Err(Error::UnknownNode("nope".into())));
        let mut z = gaussian("z", KindDesc::Latent, &[]);
        z.scale = Some(ScaleDesc::LogParam { log_param: "ls".into() });
        let spec = ModelSpec {
            params: vec![],
            nodes: vec![z],
        };
        assert_eq!(build_model(&spec), Err(Error::UnknownParam("ls".into())));
    }

    #[test]
    fn zero_scale_latent_becomes_deterministic() {
        let mut z2 = gaussian("z2", KindDesc::Latent, &["z1"]);
        z2.scale = Some(ScaleDesc::Value(0.0));
        let spec = ModelSpec {
            params: vec![],
            nodes: vec![gaussian("z1", KindDesc::Latent, &[]), z2],
        };
        let m = build_model(&spec).unwrap();
        assert_eq!(m.node(NodeId(1)).kind, NodeKind::Deterministic);
        assert_eq!(m.free_nodes(), vec![NodeId(0)]);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            [[params]]
            name = "w"
            shape = [1, 1]

            [[params]]
            name = "log_sigma_x"
            shape = [1]

            [[nodes]]
            name = "z"
            kind = "latent"
            dim = 1
            family = "gaussian"
            scale = 1.0

            [[nodes]]
            name = "x"
            kind = "observed"
            dim = 1
            parents = ["z"]
            family = "gaussian"
            scale = { log_param = "log_sigma_x" }
            link = { kind = "affine", activation = "tanh", weight = "w", bias = [0.5] }
        "#;
        let spec = ModelSpec::from_toml(text).unwrap();
        let again = ModelSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(spec, again);
        let m = build_model(&spec).unwrap();
        assert_eq!(m.num_params(), 2);
        assert_eq!(m.observed_nodes(), vec![NodeId(1)]);
    }
}
