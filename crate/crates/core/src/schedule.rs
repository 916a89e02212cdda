//! Broken-TDD measurement schedule.
//!
//! Color 0 of the distance-2 coloring is the responder group. Every other
//! color class acts as the set of simultaneous masters of one measurement
//! slot. Master classes are ordered by descending size, ties by color index.
//! In its slot a master transmits at `i1` to all neighbors, and each
//! responder adjacent to it answers at `i2`. An edge is measured in every slot
//! where one of its endpoints is a master; the fresh direction is paired with
//! the latest transmission in the other direction.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::SlotPlacement;
use crate::error::{Error, Result};
use crate::timing::SlotTiming;
use crate::topology::{ApGraph, Coloring};

/// A directional calibration transmission inside the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Transmission {
    /// Slot within the frame, 0-based.
    pub slot: usize,
    /// Within-slot sample index (`i1` or `i2`).
    pub pos: u64,
}

/// One measurement slot of the frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeasurementSlot {
    /// Slot within the frame, 0-based.
    pub slot: usize,
    pub masters: Vec<usize>,
    /// `(responder, master)` pairs transmitting at `i2`.
    pub responders: Vec<(usize, usize)>,
    /// Indices of the edges measured here, ascending.
    pub edges: Vec<usize>,
    /// Slots since the previous measurement slot, with frame wraparound.
    pub gap: usize,
}

/// Timestamps of one bidirectional measurement, global 1-based samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeTimes {
    /// Reception time of `l1 -> l2`.
    pub t_fwd: u64,
    /// Reception time of `l2 -> l1`.
    pub t_bwd: u64,
}

impl EdgeTimes {
    pub fn i_minus(&self) -> u64 {
        self.t_fwd.min(self.t_bwd)
    }

    pub fn i_plus(&self) -> u64 {
        self.t_fwd.max(self.t_bwd)
    }
}

/// The per-frame schedule of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub graph: ApGraph,
    pub coloring: Coloring,
    pub timing: SlotTiming,
    /// Frame length `F` in slots.
    pub frame_slots: usize,
    pub slots: Vec<MeasurementSlot>,
    /// Per edge, the transmission `l1 -> l2`.
    pub fwd: Vec<Transmission>,
    /// Per edge, the transmission `l2 -> l1`.
    pub bwd: Vec<Transmission>,
}

/// Master color classes in slot order.
fn master_groups(coloring: &Coloring) -> Vec<Vec<usize>> {
    let mut groups: Vec<(usize, Vec<usize>)> = (1..coloring.num_colors)
        .map(|c| (c, coloring.group(c)))
        .collect();
    groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Frame positions of the `n_m` measurement slots.
pub fn slot_positions(n_m: usize, frame_slots: usize, placement: SlotPlacement) -> Vec<usize> {
    match placement {
        SlotPlacement::First => (0..n_m).collect(),
        SlotPlacement::Even => (0..n_m).map(|j| j * frame_slots / n_m).collect(),
    }
}

/// Builds the schedule with `unbroken_slots` extra slots per frame.
pub fn build_schedule(
    graph: &ApGraph,
    coloring: &Coloring,
    timing: SlotTiming,
    unbroken_slots: usize,
    placement: SlotPlacement,
) -> Result<Schedule> {
    let groups = master_groups(coloring);
    let n_m = groups.len();
    if n_m == 0 {
        return Err(Error::InvalidConfig(
            "the coloring has no master group".into(),
        ));
    }
    let frame_slots = n_m + unbroken_slots;
    let positions = slot_positions(n_m, frame_slots, placement);
    let m = graph.num_edges();
    let mut fwd: Vec<Option<Transmission>> = vec![None; m];
    let mut bwd: Vec<Option<Transmission>> = vec![None; m];
    let mut record = |e: usize, tx: usize, t: Transmission| {
        let (l1, _) = graph.edges()[e];
        let slot = if tx == l1 { &mut fwd[e] } else { &mut bwd[e] };
        *slot = Some(t);
    };
    let mut slots = Vec::with_capacity(n_m);
    for (j, masters) in groups.into_iter().enumerate() {
        let pos = positions[j];
        let gap = if j == 0 {
            positions[0] + frame_slots - positions[n_m - 1]
        } else {
            pos - positions[j - 1]
        };
        let mut edges = Vec::new();
        let mut responders = Vec::new();
        for &ms in &masters {
            for &nb in graph.neighbors(ms) {
                let e = graph.edge_index(ms, nb).unwrap();
                edges.push(e);
                record(
                    e,
                    ms,
                    Transmission {
                        slot: pos,
                        pos: timing.i1(),
                    },
                );
                if coloring.colors[nb] == 0 {
                    responders.push((nb, ms));
                    record(
                        e,
                        nb,
                        Transmission {
                            slot: pos,
                            pos: timing.i2(),
                        },
                    );
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        responders.sort_unstable();
        slots.push(MeasurementSlot {
            slot: pos,
            masters,
            responders,
            edges,
            gap,
        });
    }
    let mut fwd_out = Vec::with_capacity(m);
    let mut bwd_out = Vec::with_capacity(m);
    for e in 0..m {
        match (fwd[e], bwd[e]) {
            (Some(f), Some(b)) => {
                fwd_out.push(f);
                bwd_out.push(b);
            }
            _ => {
                let (a, b) = graph.edges()[e];
                return Err(Error::ScheduleIncomplete(a, b));
            }
        }
    }
    Ok(Schedule {
        graph: graph.clone(),
        coloring: coloring.clone(),
        timing,
        frame_slots,
        slots,
        fwd: fwd_out,
        bwd: bwd_out,
    })
}

impl Schedule {
    /// Number of measurement slots per frame, `n_m = n_c - 1`.
    pub fn num_measurement_slots(&self) -> usize {
        self.slots.len()
    }

    /// Samples per frame, `F * tau_c`.
    pub fn frame_len(&self) -> u64 {
        self.frame_slots as u64 * self.timing.tau_c
    }

    /// Measurement slot hosted at frame position `slot`, if any.
    pub fn measurement_at(&self, slot: usize) -> Option<usize> {
        self.slots.iter().position(|s| s.slot == slot)
    }

    /// Global timestamps of the measurement of `edge` completed in
    /// measurement slot `j` of frame `frame` (both 0-based).
    pub fn edge_times(&self, edge: usize, frame: u64, j: usize) -> EdgeTimes {
        let here = self.slots[j].slot;
        let at = |t: Transmission| -> u64 {
            let f = if t.slot <= here {
                frame as i64
            } else {
                frame as i64 - 1
            };
            let slot = f * self.frame_slots as i64 + t.slot as i64;
            (slot * self.timing.tau_c as i64 + t.pos as i64).max(1) as u64
        };
        EdgeTimes {
            t_fwd: at(self.fwd[edge]),
            t_bwd: at(self.bwd[edge]),
        }
    }

    /// Selection matrix of measurement slot `j` (0-based): rows of `I_M`.
    pub fn measurement_matrix(&self, j: usize) -> DMatrix<f64> {
        selection_matrix(&self.slots[j].edges, self.graph.num_edges())
    }

    /// Structured-text (TOML) description of the schedule. AP indices are 0-based.
    pub fn dump(&self) -> String {
        #[derive(Serialize)]
        struct Edge {
            index: usize,
            l1: usize,
            l2: usize,
            fwd_slot: usize,
            fwd_sample: u64,
            bwd_slot: usize,
            bwd_sample: u64,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            num_aps: usize,
            num_edges: usize,
            num_colors: usize,
            frame_slots: usize,
            measurement_slots: usize,
            i1: u64,
            i2: u64,
            colors: &'a [usize],
            slot: &'a [MeasurementSlot],
            edge: Vec<Edge>,
        }
        let edge = self
            .graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(l1, l2))| Edge {
                index: e,
                l1,
                l2,
                fwd_slot: self.fwd[e].slot,
                fwd_sample: self.fwd[e].pos,
                bwd_slot: self.bwd[e].slot,
                bwd_sample: self.bwd[e].pos,
            })
            .collect();
        let d = Dump {
            num_aps: self.graph.num_nodes(),
            num_edges: self.graph.num_edges(),
            num_colors: self.coloring.num_colors,
            frame_slots: self.frame_slots,
            measurement_slots: self.slots.len(),
            i1: self.timing.i1(),
            i2: self.timing.i2(),
            colors: &self.coloring.colors,
            slot: &self.slots,
            edge,
        };
        toml::to_string(&d).expect("schedule dump serializes")
    }
}

/// Rows of the `m x m` identity selecting `edges`; `0 x m` when empty.
pub fn selection_matrix(edges: &[usize], m: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(edges.len(), m);
    for (r, &e) in edges.iter().enumerate() {
        a[(r, e)] = 1.0;
    }
    a
}
