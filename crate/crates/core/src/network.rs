//! Network description: links, paths, origin-destination pairs, and the
//! link-path incidence matrix.
//!
//! A network is a directed multigraph. Every origin-destination (OD) pair
//! owns a fixed set of acyclic paths and a time-varying demand rate; all
//! route choice happens over those path sets, so links and nodes never need
//! turn ratios of their own.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// One directed road segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: u64,
    pub from_node: u64,
    pub to_node: u64,
    /// Length in meters.
    pub length_m: f64,
    /// Saturation flow in vehicles/hour.
    pub capacity_vph: f64,
    /// Free-flow speed in km/h.
    pub free_flow_speed_kmh: f64,
    /// Jam density in vehicles/km; only the dynamic models read it.
    pub jam_density_vpkm: f64,
    /// BPR congestion coefficient; only the static model reads it.
    pub bpr_gamma: f64,
}

impl Link {
    /// Free-flow traversal time in seconds, derived from length and speed.
    pub fn free_flow_time_s(&self) -> f64 {
        self.length_m * 3.6 / self.free_flow_speed_kmh
    }

    /// Density at which free-flow throughput reaches capacity, in veh/km.
    /// Jam density must exceed this for the triangular flow-density relation
    /// to have a congested branch.
    pub fn critical_density_vpkm(&self) -> f64 {
        self.capacity_vph / self.free_flow_speed_kmh
    }
}

/// An ordered, loop-free sequence of links joining one OD pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub id: u64,
    /// Id of the OD pair this path serves.
    pub od: u64,
    /// Link ids in traversal order.
    pub links: Vec<u64>,
}

/// Demand rate per departure timestep, in vehicles/hour.
///
/// The profile is piecewise constant: `rates_vph[k]` applies on
/// `[k*dt_s, (k+1)*dt_s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub rates_vph: Vec<f64>,
    pub dt_s: f64,
    pub horizon_s: f64,
}

impl DemandProfile {
    /// A constant rate over `steps` timesteps of `dt_s` seconds each.
    pub fn constant(rate_vph: f64, dt_s: f64, steps: usize) -> Self {
        DemandProfile {
            rates_vph: vec![rate_vph; steps],
            dt_s,
            horizon_s: dt_s * steps as f64,
        }
    }
}

/// One origin-destination pair with its path set and demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ODPair {
    pub id: u64,
    pub origin_node: u64,
    pub destination_node: u64,
    /// Ids of the paths available to this OD pair.
    pub paths: Vec<u64>,
    pub demand: DemandProfile,
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// The network cannot be solved as given.
    Error,
    /// Suspicious but solvable (for example an unused link).
    Warning,
}

/// One violated invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    /// Entity the finding is about, e.g. `"link 5"` or `"od 0"`.
    pub entity: String,
    pub message: String,
}

impl Diagnostic {
    fn error(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            entity: entity.into(),
            message: message.into(),
        }
    }

    fn warning(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            entity: entity.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.entity, self.message)
    }
}

/// A road network with fixed path sets.
///
/// Construction resolves every id cross-reference it can and caches dense
/// indices; [`Network::validate`] reports anything that failed to resolve or
/// violates a type invariant. Operations that assume a valid network say so.
#[derive(Debug, Clone)]
pub struct Network {
    pub links: Vec<Link>,
    pub paths: Vec<Path>,
    pub ods: Vec<ODPair>,
    link_index: HashMap<u64, usize>,
    path_index: HashMap<u64, usize>,
    od_index: HashMap<u64, usize>,
    /// Per path: its links as dense indices (empty when any id is unresolved).
    path_links: Vec<Vec<usize>>,
    /// Per OD: its paths as dense indices (unresolved ids skipped).
    od_paths: Vec<Vec<usize>>,
    /// Per path: the dense index of its OD pair.
    path_od: Vec<Option<usize>>,
}

impl Network {
    pub fn new(links: Vec<Link>, paths: Vec<Path>, ods: Vec<ODPair>) -> Self {
        let link_index: HashMap<u64, usize> =
            links.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        let path_index: HashMap<u64, usize> =
            paths.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        let od_index: HashMap<u64, usize> =
            ods.iter().enumerate().map(|(i, w)| (w.id, i)).collect();

        let path_links = paths
            .iter()
            .map(|p| {
                let resolved: Option<Vec<usize>> =
                    p.links.iter().map(|id| link_index.get(id).copied()).collect();
                resolved.unwrap_or_default()
            })
            .collect();
        let od_paths = ods
            .iter()
            .map(|w| {
                w.paths
                    .iter()
                    .filter_map(|id| path_index.get(id).copied())
                    .collect()
            })
            .collect();
        let path_od = paths.iter().map(|p| od_index.get(&p.od).copied()).collect();

        Network {
            links,
            paths,
            ods,
            link_index,
            path_index,
            od_index,
            path_links,
            od_paths,
            path_od,
        }
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn n_ods(&self) -> usize {
        self.ods.len()
    }

    pub fn link_index_of(&self, id: u64) -> Option<usize> {
        self.link_index.get(&id).copied()
    }

    pub fn path_index_of(&self, id: u64) -> Option<usize> {
        self.path_index.get(&id).copied()
    }

    pub fn od_index_of(&self, id: u64) -> Option<usize> {
        self.od_index.get(&id).copied()
    }

    /// Dense link indices of path `p` (by dense path index), in traversal
    /// order. Empty when the path has unresolved link ids.
    pub fn path_links(&self, p: usize) -> &[usize] {
        &self.path_links[p]
    }

    /// Dense path indices belonging to OD `w` (by dense OD index).
    pub fn od_paths(&self, w: usize) -> &[usize] {
        &self.od_paths[w]
    }

    /// Dense OD index of path `p`, when its OD id resolves.
    pub fn path_od(&self, p: usize) -> Option<usize> {
        self.path_od[p]
    }

    /// Sum of free-flow link times along path `p`, in seconds.
    pub fn path_free_flow_time_s(&self, p: usize) -> f64 {
        self.path_links[p]
            .iter()
            .map(|&l| self.links[l].free_flow_time_s())
            .sum()
    }

    /// Check every type invariant and return one diagnostic per violation.
    ///
    /// An empty list means the network is well formed. Warnings (severity
    /// [`Severity::Warning`]) flag suspicious but solvable situations and do
    /// not make the network invalid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();

        // Id uniqueness. The index maps keep the last occurrence, so report
        // duplicates explicitly.
        for (kind, ids) in [
            ("link", self.links.iter().map(|l| l.id).collect::<Vec<_>>()),
            ("path", self.paths.iter().map(|p| p.id).collect()),
            ("od", self.ods.iter().map(|w| w.id).collect()),
        ] {
            let mut seen = HashMap::new();
            for id in ids {
                if seen.insert(id, ()).is_some() {
                    out.push(Diagnostic::error(
                        format!("{kind} {id}"),
                        format!("duplicate {kind} id"),
                    ));
                }
            }
        }

        for link in &self.links {
            let entity = format!("link {}", link.id);
            if !(link.length_m > 0.0) {
                out.push(Diagnostic::error(
                    &entity,
                    format!("length must be positive, got {}", link.length_m),
                ));
            }
            if !(link.capacity_vph > 0.0) {
                out.push(Diagnostic::error(
                    &entity,
                    format!("capacity must be positive, got {}", link.capacity_vph),
                ));
            }
            if !(link.free_flow_speed_kmh > 0.0) {
                out.push(Diagnostic::error(
                    &entity,
                    format!(
                        "free-flow speed must be positive, got {}",
                        link.free_flow_speed_kmh
                    ),
                ));
            }
            if link.capacity_vph > 0.0
                && link.free_flow_speed_kmh > 0.0
                && link.jam_density_vpkm <= link.critical_density_vpkm()
            {
                out.push(Diagnostic::error(
                    &entity,
                    format!(
                        "jam density {} veh/km must exceed the critical density {:.2} veh/km \
                         (capacity / free-flow speed)",
                        link.jam_density_vpkm,
                        link.critical_density_vpkm()
                    ),
                ));
            }
            if link.bpr_gamma < 0.0 {
                out.push(Diagnostic::error(
                    &entity,
                    format!("BPR coefficient must be nonnegative, got {}", link.bpr_gamma),
                ));
            }
        }

        for (p, path) in self.paths.iter().enumerate() {
            let entity = format!("path {}", path.id);
            if path.links.is_empty() {
                out.push(Diagnostic::error(&entity, "path has no links"));
                continue;
            }
            let mut unresolved = false;
            for id in &path.links {
                if !self.link_index.contains_key(id) {
                    out.push(Diagnostic::error(
                        &entity,
                        format!("references unknown link {id}"),
                    ));
                    unresolved = true;
                }
            }
            let od = match self.path_od[p] {
                Some(w) => Some(&self.ods[w]),
                None => {
                    out.push(Diagnostic::error(
                        &entity,
                        format!("references unknown od {}", path.od),
                    ));
                    None
                }
            };
            if unresolved {
                continue;
            }
            let links = &self.path_links[p];
            for pair in links.windows(2) {
                let (a, b) = (&self.links[pair[0]], &self.links[pair[1]]);
                if a.to_node != b.from_node {
                    out.push(Diagnostic::error(
                        &entity,
                        format!(
                            "links {} and {} are not connected (node {} vs {})",
                            a.id, b.id, a.to_node, b.from_node
                        ),
                    ));
                }
            }
            let mut seen = HashMap::new();
            for &l in links {
                if seen.insert(l, ()).is_some() {
                    out.push(Diagnostic::error(
                        &entity,
                        format!("link {} repeats; paths must be loop-free", self.links[l].id),
                    ));
                }
            }
            if let Some(od) = od {
                let first = &self.links[links[0]];
                let last = &self.links[*links.last().unwrap()];
                if first.from_node != od.origin_node {
                    out.push(Diagnostic::error(
                        &entity,
                        format!(
                            "starts at node {} but od {} originates at node {}",
                            first.from_node, od.id, od.origin_node
                        ),
                    ));
                }
                if last.to_node != od.destination_node {
                    out.push(Diagnostic::error(
                        &entity,
                        format!(
                            "ends at node {} but od {} terminates at node {}",
                            last.to_node, od.id, od.destination_node
                        ),
                    ));
                }
            }
        }

        let mut grid: Option<(f64, f64)> = None;
        for (w, od) in self.ods.iter().enumerate() {
            let entity = format!("od {}", od.id);
            if od.paths.is_empty() {
                out.push(Diagnostic::error(&entity, "od has no paths"));
            }
            for id in &od.paths {
                match self.path_index.get(id) {
                    None => out.push(Diagnostic::error(
                        &entity,
                        format!("references unknown path {id}"),
                    )),
                    Some(&p) => {
                        if self.paths[p].od != od.id {
                            out.push(Diagnostic::error(
                                &entity,
                                format!("path {} belongs to od {}", id, self.paths[p].od),
                            ));
                        }
                    }
                }
            }
            // Paths must list their OD and vice versa; catch paths claiming
            // this OD that the OD does not list.
            for (p, path) in self.paths.iter().enumerate() {
                if self.path_od[p] == Some(w) && !od.paths.contains(&path.id) {
                    out.push(Diagnostic::error(
                        &entity,
                        format!("path {} claims this od but is not listed", path.id),
                    ));
                }
            }
            let d = &od.demand;
            if !(d.dt_s > 0.0) || !(d.horizon_s > 0.0) {
                out.push(Diagnostic::error(
                    &entity,
                    format!(
                        "demand grid must be positive (dt {} s, horizon {} s)",
                        d.dt_s, d.horizon_s
                    ),
                ));
                continue;
            }
            let steps = (d.horizon_s / d.dt_s).round();
            if (d.horizon_s - steps * d.dt_s).abs() > 1e-9 * d.horizon_s.max(1.0) {
                out.push(Diagnostic::error(
                    &entity,
                    format!(
                        "horizon {} s is not a whole number of {} s steps",
                        d.horizon_s, d.dt_s
                    ),
                ));
            } else if d.rates_vph.len() != steps as usize {
                out.push(Diagnostic::error(
                    &entity,
                    format!(
                        "demand profile has {} values but the grid has {} steps",
                        d.rates_vph.len(),
                        steps as usize
                    ),
                ));
            }
            if let Some(bad) = d.rates_vph.iter().find(|r| !(**r >= 0.0)) {
                out.push(Diagnostic::error(
                    &entity,
                    format!("demand rates must be nonnegative, got {bad}"),
                ));
            }
            match grid {
                None => grid = Some((d.dt_s, d.horizon_s)),
                Some((dt, horizon)) => {
                    if d.dt_s != dt || d.horizon_s != horizon {
                        out.push(Diagnostic::error(
                            &entity,
                            format!(
                                "demand grid ({} s, {} s) differs from ({dt} s, {horizon} s) \
                                 used by earlier ods; all ods must share one grid",
                                d.dt_s, d.horizon_s
                            ),
                        ));
                    }
                }
            }
        }

        for (l, link) in self.links.iter().enumerate() {
            let used = self.path_links.iter().any(|links| links.contains(&l));
            if !used {
                out.push(Diagnostic::warning(
                    format!("link {}", link.id),
                    "link is not on any path",
                ));
            }
        }

        out
    }

    /// True when [`Network::validate`] finds no error-severity diagnostics.
    pub fn is_valid(&self) -> bool {
        self.validate()
            .iter()
            .all(|d| d.severity != Severity::Error)
    }
}

/// Binary link-path incidence matrix: entry `(l, p)` is 1 when link `l` lies
/// on path `p`. Row/column order follows the dense network indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    n_links: usize,
    n_paths: usize,
    on: Vec<bool>,
}

impl IncidenceMatrix {
    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Whether link `l` lies on path `p` (dense indices).
    pub fn is_on(&self, l: usize, p: usize) -> bool {
        self.on[l * self.n_paths + p]
    }

    /// Number of links on path `p` (column sum).
    pub fn path_len(&self, p: usize) -> usize {
        (0..self.n_links).filter(|&l| self.is_on(l, p)).count()
    }

    /// Link flows from per-path values at one timestep: `f = incidence * h`.
    pub fn link_flows(&self, path_values: &[f64]) -> Vec<f64> {
        assert_eq!(path_values.len(), self.n_paths, "path value length");
        let mut f = vec![0.0; self.n_links];
        for l in 0..self.n_links {
            for (p, &h) in path_values.iter().enumerate() {
                if self.is_on(l, p) {
                    f[l] += h;
                }
            }
        }
        f
    }
}

/// Build the link-path incidence matrix of a validated network.
pub fn build_incidence(network: &Network) -> Result<IncidenceMatrix, crate::Error> {
    let (n_links, n_paths) = (network.n_links(), network.n_paths());
    let mut on = vec![false; n_links * n_paths];
    for (p, path) in network.paths.iter().enumerate() {
        let links = network.path_links(p);
        if links.len() != path.links.len() {
            return Err(crate::Error::UnresolvedReference(format!(
                "path {} references links missing from the network",
                path.id
            )));
        }
        for &l in links {
            on[l * n_paths + p] = true;
        }
    }
    Ok(IncidenceMatrix {
        n_links,
        n_paths,
        on,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::two_route;

    #[test]
    fn two_route_network_is_clean() {
        let net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        assert_eq!(net.validate(), vec![]);
        assert!(net.is_valid());
    }

    #[test]
    fn free_flow_times_follow_length_over_speed() {
        let net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        let short = net.links[0].free_flow_time_s();
        let long = net.links[2].free_flow_time_s();
        // 200 m at 70 km/h and twice that for the 400 m link.
        assert!((short - 720.0 / 70.0).abs() < 1e-12);
        assert!((long - 2.0 * short).abs() < 1e-12);
    }

    #[test]
    fn incidence_matches_path_lists() {
        let net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        let inc = build_incidence(&net).unwrap();
        assert_eq!((inc.n_links(), inc.n_paths()), (6, 3));
        // Path 1 (dense index 0) uses links 0, 3, 4, 5 and nothing else.
        for l in 0..6 {
            assert_eq!(inc.is_on(l, 0), [true, false, false, true, true, true][l]);
        }
        // Link 1 (dense index 1) carries only path 3 (dense index 2).
        assert!(!inc.is_on(1, 0) && !inc.is_on(1, 1) && inc.is_on(1, 2));
        // Column sums equal path lengths.
        for p in 0..3 {
            assert_eq!(inc.path_len(p), 4);
        }
    }

    #[test]
    fn unknown_link_id_is_reported() {
        let mut net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        net.paths[0].links = vec![0, 99, 4, 5];
        let net = Network::new(net.links, net.paths, net.ods);
        let diags = net.validate();
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Error
                && d.entity == "path 1"
                && d.message.contains("unknown link 99")));
        assert!(!net.is_valid());
    }

    #[test]
    fn disconnected_path_is_reported() {
        let mut net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        // Links 0 and 4 do not share a node.
        net.paths[0].links = vec![0, 4, 5];
        let net = Network::new(net.links, net.paths, net.ods);
        assert!(net
            .validate()
            .iter()
            .any(|d| d.entity == "path 1" && d.message.contains("not connected")));
    }

    #[test]
    fn empty_path_set_is_an_error() {
        let mut net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        net.ods[1].paths.clear();
        net.paths.retain(|p| p.od != 1);
        let net = Network::new(net.links, net.paths, net.ods);
        let diags = net.validate();
        assert!(diags
            .iter()
            .any(|d| d.entity == "od 1" && d.message.contains("no paths")));
        // Link 1 is now orphaned: flagged, but only as a warning.
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Warning && d.entity == "link 1"));
    }

    #[test]
    fn negative_demand_is_an_error() {
        let mut net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        net.ods[0].demand.rates_vph[0] = -1.0;
        let net = Network::new(net.links, net.paths, net.ods);
        assert!(net
            .validate()
            .iter()
            .any(|d| d.entity == "od 0" && d.message.contains("nonnegative")));
    }

    #[test]
    fn jam_density_below_critical_is_an_error() {
        let mut net = two_route::network(140.0, 0.15, 1300.0, 300.0, 3600.0, 1);
        // Critical density is 2000/70 ~ 28.6 veh/km.
        net.links[0].jam_density_vpkm = 20.0;
        let net = Network::new(net.links, net.paths, net.ods);
        assert!(net
            .validate()
            .iter()
            .any(|d| d.entity == "link 0" && d.message.contains("critical density")));
    }
}
