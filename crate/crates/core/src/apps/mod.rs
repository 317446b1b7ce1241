//! Shipped problem instances and the scenario wrapper used by the harness.

pub mod jamming;
pub mod num;
pub mod quad;

use std::sync::Arc;

use nalgebra::DVector;

use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::problem::SaddleProblem;

pub use jamming::JammingInstance;
pub use num::{NumInstance, NumOptions, Topology};
pub use quad::QuadToy;

/// A problem instance together with the fading model that drives it.
#[derive(Debug, Clone)]
pub enum Scenario {
    QuadToy(Arc<QuadToy>),
    Jamming(Arc<JammingInstance>),
    Num(Arc<NumInstance>),
}

impl Scenario {
    pub fn problem(&self) -> &dyn SaddleProblem {
        match self {
            Scenario::QuadToy(p) => p.as_ref(),
            Scenario::Jamming(p) => p.as_ref(),
            Scenario::Num(p) => p.as_ref(),
        }
    }

    pub fn name(&self) -> &str {
        self.problem().name()
    }

    pub fn num(&self) -> Option<&NumInstance> {
        match self {
            Scenario::Num(p) => Some(p),
            _ => None,
        }
    }

    /// Mean parameter for a mean fading amplitude `h_bar`.
    pub fn mean_parameter(&self, h_bar: f64) -> DVector<f64> {
        match self {
            Scenario::QuadToy(_) => DVector::from_element(1, h_bar),
            Scenario::Jamming(p) => p.mean_parameter() * h_bar,
            Scenario::Num(p) => p.mean_parameter(h_bar),
        }
    }

    /// Fading model with rate `a`: real coefficients for the toy and NUM
    /// problems, complex coefficients for the jamming game.
    pub fn channel(&self, rate: f64, h_bar: f64) -> Result<ChannelModel> {
        let mean = self.mean_parameter(h_bar);
        match self {
            Scenario::Jamming(_) => ChannelModel::complex_fading(mean, rate),
            _ => ChannelModel::real_fading(mean, rate),
        }
    }

    /// Default partition of the joint variables for distributed compensation.
    pub fn default_partition(&self) -> Vec<Vec<usize>> {
        match self {
            Scenario::QuadToy(_) => vec![vec![0], vec![1]],
            Scenario::Jamming(p) => {
                let d = p.primal_dim();
                vec![(0..d).collect(), (d..2 * d).collect()]
            }
            Scenario::Num(p) => p.node_partition(),
        }
    }
}

/// Builds the shipped scenarios. The multi-node NUM instance is included
/// only when a topology is supplied.
pub fn build_instances(num: &NumOptions, topology: Option<&Topology>) -> Result<Vec<Scenario>> {
    let mut out = vec![
        Scenario::QuadToy(Arc::new(QuadToy::new())),
        Scenario::Jamming(Arc::new(JammingInstance::two_by_two())),
        Scenario::Num(Arc::new(NumInstance::three_node(num)?)),
    ];
    if let Some(t) = topology {
        out.push(Scenario::Num(Arc::new(NumInstance::from_topology(t, num)?)));
    }
    Ok(out)
}

/// Builds one scenario by name (`quad-toy`, `jamming-2x2`, `num-3node`,
/// `num-multinode`).
pub fn build_scenario(name: &str, num: &NumOptions, topology: Option<&Topology>) -> Result<Scenario> {
    Ok(match name {
        "quad-toy" => Scenario::QuadToy(Arc::new(QuadToy::new())),
        "jamming-2x2" => Scenario::Jamming(Arc::new(JammingInstance::two_by_two())),
        "num-3node" => Scenario::Num(Arc::new(NumInstance::three_node(num)?)),
        "num-multinode" => {
            let t = topology.ok_or_else(|| Error::InvalidModel("num-multinode needs a topology file".into()))?;
            Scenario::Num(Arc::new(NumInstance::from_topology(t, num)?))
        }
        other => return Err(Error::InvalidModel(format!("unknown scenario `{other}`"))),
    })
}
