//! Traffic models: static link flows and the dynamic network-loading engine.
//!
//! The dynamic models keep one cell per link and track vehicle counts
//! separately per path, so route composition is always known. Each step
//! every link offers a per-path *sending* amount (how much wants to advance)
//! and a *receiving* amount (how much fits downstream); node models match the
//! two. The cell-transmission model ([`crate::ModelKind::Ctm`]) derives
//! receiving room from a triangular flow-density relation, so full links
//! choke their upstream neighbours. The point-queue variant
//! ([`crate::ModelKind::Mn`]) fixes receiving room at capacity: vehicles pile
//! up on a link without ever blocking upstream flow.
//!
//! Node matching: a node with one upstream and one downstream link moves
//! `min(total sending, receiving)` vehicles and splits them across paths in
//! proportion to the upstream link's per-path holdings (FIFO). Every other
//! node scales each movement's sending amount by a common per-downstream-link
//! factor `min(1, receiving / total sending)`, i.e. competing approaches are
//! served in proportion to their demand, in one pass. Origins inject into
//! unbounded point queues that compete like any other approach; destinations
//! absorb everything offered.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayViewMut2};

use crate::assignment::DemandAssignment;
use crate::error::Error;
use crate::network::{IncidenceMatrix, Link, Network};
use crate::scenario::ModelKind;

/// Link flows of the static model: `f = incidence * h`, per timestep.
///
/// Returns a `(links, timesteps)` array in veh/hr.
pub fn static_flows(
    h: &DemandAssignment,
    incidence: &IncidenceMatrix,
) -> Result<Array2<f64>, Error> {
    if h.n_paths() != incidence.n_paths() {
        return Err(Error::DimensionMismatch(format!(
            "assignment has {} paths, incidence has {}",
            h.n_paths(),
            incidence.n_paths()
        )));
    }
    let mut flows = Array2::zeros((incidence.n_links(), h.steps()));
    for t in 0..h.steps() {
        let col: Vec<f64> = h.values.column(t).to_vec();
        let f = incidence.link_flows(&col);
        for (l, v) in f.into_iter().enumerate() {
            flows[[l, t]] = v;
        }
    }
    Ok(flows)
}

/// Verify every link is at least one free-flow step long. Shorter links
/// would let vehicles overshoot a whole cell per step.
pub fn check_cfl(network: &Network, dt_s: f64) -> Result<(), Error> {
    for link in &network.links {
        let travel_m = link.free_flow_speed_kmh * dt_s / 3.6;
        if travel_m > link.length_m + 1e-9 {
            return Err(Error::CflViolation {
                link: link.id,
                travel_m,
                dt_s,
                length_m: link.length_m,
            });
        }
    }
    Ok(())
}

/// Per-link constants of the triangular flow-density relation, in per-step
/// vehicle units.
#[derive(Debug, Clone, Copy)]
struct FdLink {
    /// Fraction of a link's holdings that can advance per step at free flow:
    /// `v * dt / L`, at most 1 by the CFL check.
    free_flow_pass: f64,
    /// Capacity in vehicles per step.
    cap_step: f64,
    /// Vehicles on the link at jam density.
    jam_veh: f64,
    /// Backward-wave fraction per step: `w * dt / L`.
    wave_pass: f64,
}

impl FdLink {
    fn new(link: &Link, dt_s: f64) -> Self {
        let wave_kmh =
            link.capacity_vph / (link.jam_density_vpkm - link.critical_density_vpkm());
        FdLink {
            free_flow_pass: link.free_flow_speed_kmh * dt_s / (3.6 * link.length_m),
            cap_step: link.capacity_vph * dt_s / 3600.0,
            jam_veh: link.jam_density_vpkm * link.length_m / 1000.0,
            wave_pass: wave_kmh * dt_s / (3.6 * link.length_m),
        }
    }

    /// Sending amount of one path's holdings: nondecreasing, zero at zero,
    /// capped at capacity.
    fn sending(&self, x_path: f64) -> f64 {
        (self.free_flow_pass * x_path).min(self.cap_step)
    }

    /// Receiving room given total link occupancy: nonincreasing, equals
    /// capacity when empty, zero at jam.
    fn receiving(&self, x_total: f64, model: ModelKind) -> f64 {
        match model {
            ModelKind::Mn => self.cap_step,
            ModelKind::Ctm => (self.wave_pass * (self.jam_veh - x_total))
                .min(self.cap_step)
                .max(0.0),
            ModelKind::Static => unreachable!("static model has no loading dynamics"),
        }
    }
}

/// Where a movement's vehicles come from.
#[derive(Debug, Clone, Copy, PartialEq)]
enum MoveFrom {
    /// The origin point queue of a path (plus this step's injection).
    Queue { path: usize },
    /// One path's holdings on one link.
    Link { link: usize, path: usize },
}

/// Where a movement's vehicles go.
#[derive(Debug, Clone, Copy, PartialEq)]
enum MoveTo {
    Link(usize),
    Exit,
}

#[derive(Debug, Clone, Copy)]
struct Movement {
    from: MoveFrom,
    to: MoveTo,
    /// The path the vehicles belong to.
    path: usize,
}

#[derive(Debug, Clone)]
struct NodeTable {
    movements: Vec<Movement>,
    /// Downstream links fed from this node, each with the indices (into
    /// `movements`) of the movements that compete for its receiving room.
    groups: Vec<(usize, Vec<usize>)>,
    /// Set when the node joins exactly one upstream link to exactly one
    /// downstream link with no origins or exits: (upstream, downstream).
    one_to_one: Option<(usize, usize)>,
}

/// Precomputed topology + flow-density constants for stepping one network.
pub(crate) struct LoadingEngine {
    fd: Vec<FdLink>,
    nodes: Vec<NodeTable>,
    n_links: usize,
    n_paths: usize,
    model: ModelKind,
}

impl LoadingEngine {
    pub(crate) fn new(network: &Network, model: ModelKind, dt_s: f64) -> Result<Self, Error> {
        if !model.is_dynamic() {
            return Err(Error::IncompatibleConfig(
                "loading is defined for the dynamic models only".into(),
            ));
        }
        check_cfl(network, dt_s)?;
        let fd = network.links.iter().map(|l| FdLink::new(l, dt_s)).collect();

        // Movements per node id, in deterministic path-major order.
        let mut by_node: std::collections::BTreeMap<u64, Vec<Movement>> = Default::default();
        for (p, _) in network.paths.iter().enumerate() {
            let links = network.path_links(p);
            if links.is_empty() {
                return Err(Error::UnresolvedReference(format!(
                    "path {} has unresolved links",
                    network.paths[p].id
                )));
            }
            let first = &network.links[links[0]];
            by_node.entry(first.from_node).or_default().push(Movement {
                from: MoveFrom::Queue { path: p },
                to: MoveTo::Link(links[0]),
                path: p,
            });
            for pair in links.windows(2) {
                let node = network.links[pair[0]].to_node;
                by_node.entry(node).or_default().push(Movement {
                    from: MoveFrom::Link {
                        link: pair[0],
                        path: p,
                    },
                    to: MoveTo::Link(pair[1]),
                    path: p,
                });
            }
            let last = *links.last().unwrap();
            by_node
                .entry(network.links[last].to_node)
                .or_default()
                .push(Movement {
                    from: MoveFrom::Link { link: last, path: p },
                    to: MoveTo::Exit,
                    path: p,
                });
        }

        let nodes = by_node
            .into_values()
            .map(|movements| {
                let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
                for (m, mv) in movements.iter().enumerate() {
                    if let MoveTo::Link(l) = mv.to {
                        match groups.iter_mut().find(|(g, _)| *g == l) {
                            Some((_, idxs)) => idxs.push(m),
                            None => groups.push((l, vec![m])),
                        }
                    }
                }
                let mut up_links: Vec<usize> = movements
                    .iter()
                    .filter_map(|m| match m.from {
                        MoveFrom::Link { link, .. } => Some(link),
                        MoveFrom::Queue { .. } => None,
                    })
                    .collect();
                up_links.sort_unstable();
                up_links.dedup();
                let has_queue = movements
                    .iter()
                    .any(|m| matches!(m.from, MoveFrom::Queue { .. }));
                let has_exit = movements.iter().any(|m| m.to == MoveTo::Exit);
                let one_to_one = match (up_links.as_slice(), groups.as_slice()) {
                    ([up], [(down, _)]) if !has_queue && !has_exit => Some((*up, *down)),
                    _ => None,
                };
                NodeTable {
                    movements,
                    groups,
                    one_to_one,
                }
            })
            .collect();

        Ok(LoadingEngine {
            fd,
            nodes,
            n_links: network.n_links(),
            n_paths: network.n_paths(),
            model,
        })
    }

    /// Advance one step. Reads the state at the step start (`x` is
    /// links x paths, `queue` per path) and this step's per-path injection
    /// (vehicles); writes per-path link inflows/outflows, queue discharges,
    /// and exits. All sending/receiving amounts are evaluated on the
    /// start-of-step state before any of them is applied.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn step(
        &self,
        x: ArrayView2<f64>,
        queue: &[f64],
        inject: &[f64],
        mut flows_in: ArrayViewMut2<f64>,
        mut flows_out: ArrayViewMut2<f64>,
        queue_discharge: &mut [f64],
        exits: &mut [f64],
    ) {
        debug_assert_eq!(x.dim(), (self.n_links, self.n_paths));
        flows_in.fill(0.0);
        flows_out.fill(0.0);
        queue_discharge.fill(0.0);
        exits.fill(0.0);

        let receiving = |l: usize| {
            let total: f64 = x.row(l).sum();
            self.fd[l].receiving(total, self.model)
        };

        for node in &self.nodes {
            if let Some((up, down)) = node.one_to_one {
                // FIFO pair: move min(sending, receiving) vehicles, split
                // across paths in proportion to the upstream holdings.
                let total_sending: f64 = node
                    .movements
                    .iter()
                    .map(|m| self.fd[up].sending(x[[up, m.path]]))
                    .sum();
                let flow = total_sending.min(receiving(down));
                let x_total: f64 = node.movements.iter().map(|m| x[[up, m.path]]).sum();
                if flow > 0.0 && x_total > 0.0 {
                    for m in &node.movements {
                        let share = flow * x[[up, m.path]] / x_total;
                        flows_out[[up, m.path]] += share;
                        flows_in[[down, m.path]] += share;
                    }
                }
                continue;
            }

            let sending: Vec<f64> = node
                .movements
                .iter()
                .map(|m| match m.from {
                    MoveFrom::Queue { path } => queue[path] + inject[path],
                    MoveFrom::Link { link, path } => self.fd[link].sending(x[[link, path]]),
                })
                .collect();
            // One scale factor per downstream link, shared by every movement
            // feeding it.
            let mut scale = vec![1.0f64; node.movements.len()];
            for (down, idxs) in &node.groups {
                let total: f64 = idxs.iter().map(|&m| sending[m]).sum();
                let room = receiving(*down);
                if total > room {
                    let beta = room / total;
                    for &m in idxs {
                        scale[m] = beta;
                    }
                }
            }
            for (m, mv) in node.movements.iter().enumerate() {
                let flow = scale[m] * sending[m];
                if flow <= 0.0 {
                    continue;
                }
                match mv.from {
                    MoveFrom::Queue { path } => queue_discharge[path] += flow,
                    MoveFrom::Link { link, path } => flows_out[[link, path]] += flow,
                }
                match mv.to {
                    MoveTo::Link(l) => flows_in[[l, mv.path]] += flow,
                    MoveTo::Exit => exits[mv.path] += flow,
                }
            }
        }
    }
}

/// Full record of one dynamic loading: per-path vehicle counts on every link
/// at each step boundary, the flows that moved them, origin queues, and
/// exits.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    /// `x[[l, p, k]]`: vehicles of path `p` on link `l` at the start of step
    /// `k`, for `k` in `0..=steps`.
    pub x: Array3<f64>,
    /// `flows_in[[l, p, k]]`: vehicles entering link `l` on path `p` during
    /// step `k`.
    pub flows_in: Array3<f64>,
    /// `flows_out[[l, p, k]]`: vehicles leaving link `l` on path `p` during
    /// step `k` (toward the next link or out of the network).
    pub flows_out: Array3<f64>,
    /// `link_flow[[l, k]]`: total outflow of link `l` during step `k`, summed
    /// over paths.
    pub link_flow: Array2<f64>,
    /// `queue[[p, k]]`: vehicles waiting in path `p`'s origin queue at the
    /// start of step `k`.
    pub queue: Array2<f64>,
    /// `exited[[p, k]]`: vehicles of path `p` that reached their destination
    /// during step `k`.
    pub exited: Array2<f64>,
    pub dt_s: f64,
}

impl StateTrajectory {
    pub fn n_links(&self) -> usize {
        self.x.dim().0
    }

    pub fn n_paths(&self) -> usize {
        self.x.dim().1
    }

    /// Number of flow steps (state samples run `0..=steps`).
    pub fn steps(&self) -> usize {
        self.flows_in.dim().2
    }

    /// Total occupancy of link `l` at the start of step `k`.
    pub fn link_occupancy(&self, l: usize, k: usize) -> f64 {
        self.x.slice(s![l, .., k]).sum()
    }
}

/// Run a dynamic model over the whole horizon of `h`.
///
/// `h` must be shaped for `network` (its timestep count fixes the horizon).
/// The caller is expected to pass a feasible assignment, but any nonnegative
/// demand pattern loads fine — infeasibility only means the OD totals are
/// off. Vehicles that do not fit into their first link wait in unbounded
/// origin queues; queued vehicles count toward conservation but not toward
/// any link's travel time.
pub fn run_loading(
    h: &DemandAssignment,
    network: &Network,
    model: ModelKind,
) -> Result<StateTrajectory, Error> {
    let engine = LoadingEngine::new(network, model, h.dt_s)?;
    if h.n_paths() != network.n_paths() {
        return Err(Error::DimensionMismatch(format!(
            "assignment has {} paths, network has {}",
            h.n_paths(),
            network.n_paths()
        )));
    }
    let (n_links, n_paths, steps) = (network.n_links(), network.n_paths(), h.steps());
    let mut traj = StateTrajectory {
        x: Array3::zeros((n_links, n_paths, steps + 1)),
        flows_in: Array3::zeros((n_links, n_paths, steps)),
        flows_out: Array3::zeros((n_links, n_paths, steps)),
        link_flow: Array2::zeros((n_links, steps)),
        queue: Array2::zeros((n_paths, steps + 1)),
        exited: Array2::zeros((n_paths, steps)),
        dt_s: h.dt_s,
    };
    let mut inject = vec![0.0f64; n_paths];
    let mut discharge = vec![0.0f64; n_paths];
    let mut exits = vec![0.0f64; n_paths];
    for k in 0..steps {
        for p in 0..n_paths {
            inject[p] = h.values[[p, k]] * h.dt_s / 3600.0;
        }
        let x_now = traj.x.slice(s![.., .., k]).to_owned();
        let queue_now: Vec<f64> = traj.queue.column(k).to_vec();
        engine.step(
            x_now.view(),
            &queue_now,
            &inject,
            traj.flows_in.slice_mut(s![.., .., k]),
            traj.flows_out.slice_mut(s![.., .., k]),
            &mut discharge,
            &mut exits,
        );
        for l in 0..n_links {
            for p in 0..n_paths {
                traj.x[[l, p, k + 1]] =
                    x_now[[l, p]] + traj.flows_in[[l, p, k]] - traj.flows_out[[l, p, k]];
            }
            traj.link_flow[[l, k]] = traj.flows_out.slice(s![l, .., k]).sum();
        }
        for p in 0..n_paths {
            traj.queue[[p, k + 1]] = queue_now[p] + inject[p] - discharge[p];
            traj.exited[[p, k]] = exits[p];
        }
    }
    Ok(traj)
}

/// Vehicle bookkeeping over a loading: at every step boundary, everything
/// injected so far must sit in a queue, on a link, or among the exits.
#[derive(Debug, Clone, Copy)]
pub struct Ledger {
    pub entered_veh: f64,
    pub exited_veh: f64,
    pub on_links_veh: f64,
    pub queued_veh: f64,
    /// Largest relative imbalance found at any step boundary.
    pub max_relative_error: f64,
}

/// Audit conservation of `traj` against the demand `h` that produced it.
pub fn vehicle_ledger(traj: &StateTrajectory, h: &DemandAssignment) -> Ledger {
    let steps = traj.steps();
    let mut entered = 0.0;
    let mut exited = 0.0;
    let mut worst: f64 = 0.0;
    for k in 0..=steps {
        if k > 0 {
            for p in 0..traj.n_paths() {
                entered += h.values[[p, k - 1]] * h.dt_s / 3600.0;
                exited += traj.exited[[p, k - 1]];
            }
        }
        let on_links: f64 = traj.x.slice(s![.., .., k]).sum();
        let queued: f64 = traj.queue.column(k).sum();
        let gap = (entered - (exited + on_links + queued)).abs();
        worst = worst.max(gap / entered.max(1.0));
    }
    Ledger {
        entered_veh: entered,
        exited_veh: exited,
        on_links_veh: traj.x.slice(s![.., .., steps]).sum(),
        queued_veh: traj.queue.column(steps).sum(),
        max_relative_error: worst,
    }
}
