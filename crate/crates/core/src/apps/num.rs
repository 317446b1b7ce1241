//! Wireless network utility maximisation with fading link capacities.
//!
//! Rates `r` (one per flow) maximise `sum log(1 + r_f)` subject to capacity
//! constraints `sum_{f loads k} r_f <= c_k(h)` and `r >= 0`. Both constraint
//! families are dualised, so the multiplier vector is
//! `(lambda_constraints, lambda_nonneg)`. A constraint covers a set of links
//! `S_k` and has capacity `(1 - backoff) log(1 + sum_{l in S_k} h_l^2 P_l)`:
//! a single link gives the per-link constraint, several links arriving at
//! one node give the multiple-access sum constraint.
//!
//! The throughput metric checks the allocated rates against the true
//! (un-backed-off) capacity region at every receiving node.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::problem::{FeasibleSet, JointState, ModuliHint, SaddleProblem};

/// Directed link. Node and link identifiers are 1-based as in topology files.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    /// Index of this link's fading coefficient in `h`.
    pub param: usize,
    /// Transmit power `P_l`.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub source: usize,
    pub dest: usize,
    /// Link identifiers (1-based) in path order.
    pub route: Vec<usize>,
}

/// Who owns a constraint multiplier in the node partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Per-link constraint of link `id` (1-based).
    Link(usize),
    /// Sum constraint over the links arriving at `node`.
    MultipleAccess(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub kind: ConstraintKind,
    /// Link identifiers (1-based) whose powers enter the capacity.
    pub links: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct NumInstance {
    name: String,
    nodes: usize,
    links: Vec<Link>,
    flows: Vec<Flow>,
    constraints: Vec<Constraint>,
    /// `load[(k, f)]`: number of links of flow `f`'s route inside constraint `k`.
    load: DMatrix<f64>,
    /// Receiving nodes whose region includes the multiple-access sum check.
    mac_region: Vec<bool>,
    param_dim: usize,
    backoff: f64,
    primal: FeasibleSet,
    dual: FeasibleSet,
}

/// Options shared by all NUM instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumOptions {
    /// Average receive SNR in dB; sets every link power so that the
    /// stationary mean of `h_l^2 P_l` equals the SNR.
    pub snr_db: f64,
    /// Mean fading amplitude; the stationary variance is one.
    pub h_bar: f64,
    /// Fraction by which the optimiser shrinks every capacity.
    pub backoff: f64,
    /// Upper rate bound.
    pub r_max: f64,
}

impl Default for NumOptions {
    fn default() -> Self {
        Self {
            snr_db: 10.0,
            h_bar: 1.0,
            backoff: 0.0,
            r_max: 1e3,
        }
    }
}

/// Lower rate bound. Rates are kept above -1/2 so that `log(1 + r)` stays
/// defined during transients; nonnegativity itself is enforced through the
/// multipliers.
pub const RATE_FLOOR: f64 = -0.5;

impl NumOptions {
    pub fn link_power(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0) / (self.h_bar * self.h_bar + 1.0)
    }
}

impl NumInstance {
    /// Builds an instance and validates the routes.
    pub fn new(
        name: &str,
        nodes: usize,
        links: Vec<Link>,
        flows: Vec<Flow>,
        mac_region: Vec<bool>,
        mac_constraints: bool,
        options: &NumOptions,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&options.backoff) || !(options.r_max > 0.0) {
            return Err(Error::InvalidModel("backoff must lie in [0, 1) and r_max > 0".into()));
        }
        for (i, l) in links.iter().enumerate() {
            if l.from == 0 || l.to == 0 || l.from > nodes || l.to > nodes || l.from == l.to {
                return Err(Error::InvalidModel(format!("link {} has invalid endpoints", i + 1)));
            }
            if !(l.power > 0.0) {
                return Err(Error::InvalidModel(format!("link {} needs positive power", i + 1)));
            }
        }
        for f in &flows {
            validate_route(f, &links)?;
        }
        let mut constraints: Vec<Constraint> = (1..=links.len())
            .map(|id| Constraint {
                kind: ConstraintKind::Link(id),
                links: vec![id],
            })
            .collect();
        if mac_constraints {
            for node in 1..=nodes {
                let incoming: Vec<usize> = (1..=links.len()).filter(|id| links[id - 1].to == node).collect();
                if incoming.len() >= 2 && mac_region.get(node - 1).copied().unwrap_or(true) {
                    constraints.push(Constraint {
                        kind: ConstraintKind::MultipleAccess(node),
                        links: incoming,
                    });
                }
            }
        }
        let mut load = DMatrix::zeros(constraints.len(), flows.len());
        for (k, c) in constraints.iter().enumerate() {
            for (f, flow) in flows.iter().enumerate() {
                load[(k, f)] = flow.route.iter().filter(|l| c.links.contains(l)).count() as f64;
            }
        }
        let param_dim = links.iter().map(|l| l.param + 1).max().unwrap_or(0);
        Ok(Self {
            name: name.to_string(),
            nodes,
            links,
            flows,
            constraints,
            load,
            mac_region,
            param_dim,
            backoff: options.backoff,
            primal: FeasibleSet::Box {
                lower: RATE_FLOOR,
                upper: options.r_max,
            },
            dual: FeasibleSet::Orthant,
        })
    }

    /// Three nodes, two links (1->2, 2->3) and flows (1,2), (1,3), (2,3).
    pub fn three_node(options: &NumOptions) -> Result<Self> {
        let p = options.link_power();
        let links = vec![
            Link { from: 1, to: 2, param: 0, power: p },
            Link { from: 2, to: 3, param: 1, power: p },
        ];
        let flows = vec![
            Flow { source: 1, dest: 2, route: vec![1] },
            Flow { source: 1, dest: 3, route: vec![1, 2] },
            Flow { source: 2, dest: 3, route: vec![2] },
        ];
        Self::new("num-3node", 3, links, flows, vec![true; 3], false, options)
    }

    /// Instance described by a topology file.
    pub fn from_topology(topology: &Topology, options: &NumOptions) -> Result<Self> {
        let mut options = *options;
        if let Some(b) = topology.backoff {
            options.backoff = b;
        }
        if let Some(r) = topology.r_max {
            options.r_max = r;
        }
        let p = options.link_power();
        let links = topology
            .link
            .iter()
            .enumerate()
            .map(|(i, l)| Link {
                from: l.from,
                to: l.to,
                param: l.param.unwrap_or(i),
                power: p,
            })
            .collect();
        let flows = topology
            .flow
            .iter()
            .map(|f| Flow {
                source: f.source,
                dest: f.dest,
                route: f.route.get_ref().clone(),
            })
            .collect();
        let mut mac = vec![true; topology.nodes];
        for r in &topology.region {
            if r.node >= 1 && r.node <= topology.nodes {
                mac[r.node - 1] = r.mac_sum;
            }
        }
        Self::new(
            topology.name.as_deref().unwrap_or("num-multinode"),
            topology.nodes,
            links,
            flows,
            mac,
            topology.mac_constraints.unwrap_or(true),
            &options,
        )
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }
    pub fn links(&self) -> &[Link] {
        &self.links
    }
    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }
    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }
    pub fn backoff(&self) -> f64 {
        self.backoff
    }

    /// Mean parameter `h_bar` for every link coefficient.
    pub fn mean_parameter(&self, h_bar: f64) -> DVector<f64> {
        DVector::from_element(self.param_dim, h_bar)
    }

    fn snr_sum(&self, links: &[usize], h: &DVector<f64>) -> f64 {
        links
            .iter()
            .map(|id| {
                let l = &self.links[id - 1];
                h[l.param].powi(2) * l.power
            })
            .sum()
    }

    /// Capacity of link `id` (1-based) without backoff.
    pub fn link_capacity(&self, id: usize, h: &DVector<f64>) -> f64 {
        self.snr_sum(&[id], h).ln_1p()
    }

    /// Capacities used by the optimiser, one per constraint.
    pub fn constraint_capacities(&self, h: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints
                .iter()
                .map(|c| (1.0 - self.backoff) * self.snr_sum(&c.links, h).ln_1p()),
        )
    }

    /// Allocated rate on every link.
    pub fn link_rates(&self, r: &DVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.links.len()];
        for (f, flow) in self.flows.iter().enumerate() {
            for id in &flow.route {
                out[id - 1] += r[f];
            }
        }
        out
    }

    fn split<'a>(&self, s: &'a JointState) -> (nalgebra::DVectorView<'a, f64>, nalgebra::DVectorView<'a, f64>) {
        let k = self.constraints.len();
        (s.lambda.rows(0, k), s.lambda.rows(k, self.flows.len()))
    }

    /// Complementarity form of the optimality conditions:
    /// `(dL/dr, lambda_k (load_k - c_k), lambda_r,f r_f)`.
    pub fn kkt_residual(&self, s: &JointState, h: &DVector<f64>) -> DVector<f64> {
        let (lc, lr) = self.split(s);
        let gr = self.grad_x(s, h);
        let slack = &self.load * &s.x - self.constraint_capacities(h);
        let mut out = DVector::zeros(gr.len() + slack.len() + lr.len());
        out.rows_mut(0, gr.len()).copy_from(&gr);
        for k in 0..slack.len() {
            out[gr.len() + k] = lc[k] * slack[k];
        }
        for f in 0..lr.len() {
            out[gr.len() + slack.len() + f] = lr[f] * s.x[f];
        }
        out
    }

    /// Sum of the rates of flows delivered end to end. A flow is delivered
    /// when every node it is received at passes its capacity-region check at
    /// the true capacities: each incoming link's allocated rate within its
    /// capacity and, where enabled, the incoming sum within the
    /// multiple-access sum capacity.
    pub fn throughput(&self, r: &DVector<f64>, h: &DVector<f64>) -> f64 {
        let ok = self.node_feasibility(r, h);
        self.flows
            .iter()
            .enumerate()
            .filter(|(_, f)| f.route.iter().all(|id| ok[self.links[id - 1].to - 1]))
            .map(|(i, _)| r[i].max(0.0))
            .sum()
    }

    /// Region check per receiving node (true when no incoming links).
    pub fn node_feasibility(&self, r: &DVector<f64>, h: &DVector<f64>) -> Vec<bool> {
        let rates = self.link_rates(r);
        let within = |rate: f64, cap: f64| rate <= cap + 1e-9 * (1.0 + cap);
        (1..=self.nodes)
            .map(|node| {
                let incoming: Vec<usize> = (1..=self.links.len()).filter(|id| self.links[id - 1].to == node).collect();
                let per_link = incoming
                    .iter()
                    .all(|id| within(rates[id - 1], self.link_capacity(*id, h)));
                let mac = if incoming.len() >= 2 && self.mac_region[node - 1] {
                    let total: f64 = incoming.iter().map(|id| rates[id - 1]).sum();
                    within(total, self.snr_sum(&incoming, h).ln_1p())
                } else {
                    true
                };
                per_link && mac
            })
            .collect()
    }

    /// Partition of the joint variables by owning node: a node owns the flows
    /// it sources, the constraints of the links it transmits on, the
    /// multiple-access constraint of its receiver and the nonnegativity
    /// multipliers of its flows. Empty groups are dropped.
    pub fn node_partition(&self) -> Vec<Vec<usize>> {
        let n = self.flows.len();
        let k = self.constraints.len();
        let mut groups = vec![Vec::new(); self.nodes];
        for (f, flow) in self.flows.iter().enumerate() {
            groups[flow.source - 1].push(f);
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let owner = match c.kind {
                ConstraintKind::Link(id) => self.links[id - 1].from,
                ConstraintKind::MultipleAccess(node) => node,
            };
            groups[owner - 1].push(n + i);
        }
        for (f, flow) in self.flows.iter().enumerate() {
            groups[flow.source - 1].push(n + k + f);
        }
        for g in groups.iter_mut() {
            g.sort_unstable();
        }
        groups.into_iter().filter(|g| !g.is_empty()).collect()
    }
}

fn validate_route(f: &Flow, links: &[Link]) -> Result<()> {
    let bad = |why: &str| {
        Error::InvalidModel(format!(
            "route {:?} of flow ({}, {}) {why}",
            f.route, f.source, f.dest
        ))
    };
    if f.route.is_empty() {
        return Err(bad("is empty"));
    }
    if f.route.iter().any(|id| *id == 0 || *id > links.len()) {
        return Err(bad("references an unknown link"));
    }
    let mut at = f.source;
    let mut visited = vec![at];
    for id in &f.route {
        let l = &links[id - 1];
        if l.from != at {
            return Err(bad("is not a connected path"));
        }
        at = l.to;
        if visited.contains(&at) {
            return Err(bad("revisits a node"));
        }
        visited.push(at);
    }
    if at != f.dest {
        return Err(bad("does not end at the destination"));
    }
    Ok(())
}

impl SaddleProblem for NumInstance {
    fn name(&self) -> &str {
        &self.name
    }
    fn primal_dim(&self) -> usize {
        self.flows.len()
    }
    fn dual_dim(&self) -> usize {
        self.constraints.len() + self.flows.len()
    }
    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn value(&self, s: &JointState, h: &DVector<f64>) -> f64 {
        let (lc, lr) = self.split(s);
        let utility: f64 = s.x.iter().map(|r| r.ln_1p()).sum();
        let slack = &self.load * &s.x - self.constraint_capacities(h);
        utility - lc.dot(&slack) + lr.dot(&s.x)
    }

    fn grad_x(&self, s: &JointState, _h: &DVector<f64>) -> DVector<f64> {
        let (lc, lr) = self.split(s);
        let marginal = s.x.map(|r| 1.0 / (1.0 + r));
        marginal - self.load.tr_mul(&lc) + lr
    }

    fn grad_lambda(&self, s: &JointState, h: &DVector<f64>) -> DVector<f64> {
        let slack = &self.load * &s.x - self.constraint_capacities(h);
        let mut out = DVector::zeros(self.dual_dim());
        let k = self.constraints.len();
        out.rows_mut(0, k).copy_from(&(-slack));
        out.rows_mut(k, self.flows.len()).copy_from(&s.x);
        out
    }

    fn primal_set(&self) -> &FeasibleSet {
        &self.primal
    }
    fn dual_set(&self) -> &FeasibleSet {
        &self.dual
    }

    fn moduli_hint(&self) -> ModuliHint {
        // log(1 + r) on r <= r_max has curvature at least 1 / (1 + r_max)^2;
        // the Lagrangian is linear in the multipliers.
        let r_max = match self.primal {
            FeasibleSet::Box { upper, .. } => upper,
            _ => f64::INFINITY,
        };
        ModuliHint {
            m_x: 1.0 / (1.0 + r_max).powi(2),
            m_lambda: 0.0,
        }
    }

    fn initial_guess(&self, _h: &DVector<f64>) -> JointState {
        JointState::new(
            DVector::from_element(self.flows.len(), 0.1),
            DVector::from_fn(self.dual_dim(), |i, _| if i < self.constraints.len() { 0.5 } else { 0.0 }),
        )
    }

    fn direction_jacobians(&self, s: &JointState, h: &DVector<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.flows.len();
        let k = self.constraints.len();
        let dim = n + k + n;
        let mut jz = DMatrix::zeros(dim, dim);
        for f in 0..n {
            jz[(f, f)] = -1.0 / (1.0 + s.x[f]).powi(2);
            jz[(f, n + k + f)] = 1.0;
            jz[(n + k + f, f)] = -1.0;
        }
        for c in 0..k {
            for f in 0..n {
                jz[(f, n + c)] = -self.load[(c, f)];
                jz[(n + c, f)] = self.load[(c, f)];
            }
        }
        let mut jh = DMatrix::zeros(dim, self.param_dim);
        for (c, con) in self.constraints.iter().enumerate() {
            let denom = 1.0 + self.snr_sum(&con.links, h);
            for id in &con.links {
                let l = &self.links[id - 1];
                jh[(n + c, l.param)] -= (1.0 - self.backoff) * 2.0 * h[l.param] * l.power / denom;
            }
        }
        Some((jz, jh))
    }
}

/// Topology file contents.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub name: Option<String>,
    pub nodes: usize,
    /// Overrides the capacity backoff of the run configuration.
    pub backoff: Option<f64>,
    pub r_max: Option<f64>,
    /// Whether multiple-access sum constraints enter the optimiser
    /// (default true).
    pub mac_constraints: Option<bool>,
    #[serde(default)]
    pub link: Vec<TopologyLink>,
    #[serde(default)]
    pub flow: Vec<TopologyFlow>,
    #[serde(default)]
    pub region: Vec<TopologyRegion>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyLink {
    pub from: usize,
    pub to: usize,
    /// Fading-coefficient index (0-based); defaults to the link's position.
    pub param: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFlow {
    pub source: usize,
    pub dest: usize,
    pub route: toml::Spanned<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyRegion {
    pub node: usize,
    pub mac_sum: bool,
}

/// 1-based line and column of a byte offset.
pub fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |p| offset - p - 1) + 1;
    (line, column)
}

impl Topology {
    /// Parses and validates a topology, reporting the position of the
    /// offending entry on failure.
    pub fn parse(text: &str) -> Result<Self> {
        let topo: Topology = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            Error::Topology {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let links: Vec<Link> = topo
            .link
            .iter()
            .enumerate()
            .map(|(i, l)| Link {
                from: l.from,
                to: l.to,
                param: l.param.unwrap_or(i),
                power: 1.0,
            })
            .collect();
        for l in &topo.link {
            if l.from == 0 || l.to == 0 || l.from > topo.nodes || l.to > topo.nodes || l.from == l.to {
                return Err(Error::Topology {
                    line: 0,
                    column: 0,
                    message: format!("link {} -> {} has invalid endpoints", l.from, l.to),
                });
            }
        }
        for f in &topo.flow {
            let flow = Flow {
                source: f.source,
                dest: f.dest,
                route: f.route.get_ref().clone(),
            };
            if let Err(Error::InvalidModel(message)) = validate_route(&flow, &links) {
                let (line, column) = line_column(text, f.route.span().start);
                return Err(Error::Topology { line, column, message });
            }
        }
        Ok(topo)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn three() -> NumInstance {
        NumInstance::three_node(&NumOptions::default()).unwrap()
    }

    #[test]
    fn three_node_dimensions() {
        let p = three();
        assert_eq!(p.primal_dim(), 3);
        assert_eq!(p.dual_dim(), 5);
        assert_eq!(p.param_dim(), 2);
        assert_relative_eq!(p.link_capacity(1, &DVector::from_element(2, 1.0)), 6f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gradient_at_origin() {
        let p = three();
        let s = JointState::zeros(3, 5);
        let g = p.grad_x(&s, &DVector::from_element(2, 1.0));
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn route_expansion_for_two_hop_flow() {
        let p = three();
        let s = JointState::new(
            DVector::from_vec(vec![0.2, 0.4, 0.1]),
            DVector::from_vec(vec![0.3, 0.7, 0.0, 0.05, 0.0]),
        );
        let g = p.grad_x(&s, &DVector::from_element(2, 1.0));
        assert_relative_eq!(g[1], 1.0 / 1.4 - 0.3 - 0.7 + 0.05, epsilon = 1e-14);
    }

    #[test]
    fn active_link_has_zero_dual_gradient() {
        let p = three();
        let h = DVector::from_element(2, 1.0);
        let c1 = p.link_capacity(1, &h);
        let s = JointState::new(DVector::from_vec(vec![c1 / 2.0, c1 / 2.0, 0.0]), DVector::zeros(5));
        assert!(p.grad_lambda(&s, &h)[0].abs() < 1e-14);
    }

    #[test]
    fn throughput_drops_flows_behind_violated_node() {
        let p = three();
        let h = DVector::from_element(2, 1.0);
        let c1 = p.link_capacity(1, &h);
        let c2 = p.link_capacity(2, &h);
        let ok = DVector::from_vec(vec![0.2, 0.2, 0.2]);
        assert_relative_eq!(p.throughput(&ok, &h), 0.6, epsilon = 1e-15);
        let r = DVector::from_vec(vec![c1, 0.3, c2 - 0.5]);
        assert_relative_eq!(p.throughput(&r, &h), c2 - 0.5, epsilon = 1e-15);
    }

    #[test]
    fn node_partition_of_three_node() {
        // Node 1: r12, r13, link-1 multiplier, their nonnegativity multipliers.
        assert_eq!(three().node_partition(), vec![vec![0, 1, 3, 5, 6], vec![2, 4, 7]]);
    }

    #[test]
    fn topology_reports_bad_route_position() {
        let text = "nodes = 3\n[[link]]\nfrom = 1\nto = 2\n[[link]]\nfrom = 2\nto = 3\n[[flow]]\nsource = 1\ndest = 3\nroute = [2, 1]\n";
        match Topology::parse(text) {
            Err(Error::Topology { line, column, message }) => {
                assert_eq!(line, 11);
                assert_eq!(column, 9);
                assert!(message.contains("[2, 1]"));
            }
            other => panic!("expected topology error, got {other:?}"),
        }
    }

    #[test]
    fn topology_reports_syntax_position() {
        let text = "nodes = 3\n[[link]]\nfrom = \n";
        assert!(matches!(Topology::parse(text), Err(Error::Topology { line: 3, .. })));
    }
}
