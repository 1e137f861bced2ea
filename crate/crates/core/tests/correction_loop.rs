//! One full correct-relax-resimulate cycle on a synthetic scene: a sill
//! blocking a channel keeps an observed-wet pool dry until the correction
//! derived from the simulation opens it.

mod common;

use demforge_core::assimilate::{relax, with_exterior_anchors, SolverParams};
use demforge_core::hydrosim::{
    run, wet_mask, Boundaries, BoundaryKind, Hydrograph, SimParams,
};
use demforge_core::verify::{compare_masks, propose_corrections};

fn sim_params(scene: &common::ForkScene) -> SimParams {
    SimParams {
        inflow_cells: vec![scene.inflow_cell],
        boundaries: Boundaries { north: BoundaryKind::Open, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn a_single_correction_cycle_floods_the_blocked_pool() {
    let wet_thr = 0.02;
    let hydrograph = Hydrograph::constant(0.25);
    let t_end = 400.0;

    // reference simulation on the true bed defines the observations
    let truth = common::fork_scene(false);
    let ref_run = run(&truth.bed, &sim_params(&truth), &hydrograph, t_end, t_end, None).unwrap();
    let observed = wet_mask(ref_run.final_state(), wet_thr);
    for &(col, row) in &truth.pool_cells {
        assert!(observed.get(col, row), "reference run must flood the pool");
    }

    // corrupted bed: the sill keeps the east branch and the pool dry
    let broken = common::fork_scene(true);
    let params = sim_params(&broken);
    let run1 = run(&broken.bed, &params, &hydrograph, t_end, t_end, None).unwrap();
    let mask1 = wet_mask(run1.final_state(), wet_thr);
    let csi1 = compare_masks(&mask1, &observed).unwrap().csi;
    for &(col, row) in &broken.pool_cells {
        assert!(!mask1.get(col, row), "sill failed to block the pool");
    }

    let corrections = propose_corrections(
        &broken.bed,
        run1.final_state(),
        params.h_dry,
        wet_thr,
        &observed,
        &[],
        0.2,
    )
    .unwrap();
    assert!(!corrections.is_empty());
    assert!(
        corrections.constraints.iter().any(|c| (c.col, c.row) == broken.sill_cell),
        "the sill cell itself must be corrected"
    );
    // conservative edits only
    for c in &corrections.constraints {
        assert!(c.value < broken.bed.get(c.col, c.row));
    }

    let pinned = with_exterior_anchors(&broken.bed, &corrections, 0).unwrap();
    let fixed = relax(&broken.bed, &pinned, &SolverParams::default()).unwrap().grid;

    let run2 = run(&fixed, &params, &hydrograph, t_end, t_end, None).unwrap();
    let mask2 = wet_mask(run2.final_state(), wet_thr);
    let cmp2 = compare_masks(&mask2, &observed).unwrap();
    for &(col, row) in &broken.pool_cells {
        assert!(mask2.get(col, row), "pool cell ({col},{row}) still dry after the correction");
    }
    assert!(cmp2.csi > csi1, "csi did not improve: {csi1} -> {}", cmp2.csi);
}
