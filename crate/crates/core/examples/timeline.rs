//! Event-driven schedule of single steps, printed lane by lane.

use mirror_sd::sim::{Lane, StepTimeline};
use mirror_sd::timing::LatencyParams;

fn show(name: &str, tl: &StepTimeline) {
    println!("{name}: {:.3} ms", tl.total());
    for lane in [Lane::Target, Lane::Channel, Lane::Draft] {
        for i in tl.lane(lane) {
            println!("  {:<8} {:<14} {:>7.3} .. {:>7.3}", format!("{lane:?}"), i.label, i.start, i.end);
        }
    }
}

fn main() {
    let mut p = LatencyParams::unit_layers(8, 4, 0.1);
    p.draft_step_compute = 0.5;
    show("mirror, hidden draft", &StepTimeline::mirror(&p, 0.0, 0, &[6, 6, 4, 6]));
    show("mirror, fresh window", &StepTimeline::mirror(&p, 0.0, 7, &[6, 6]));
    p.branch_parallelism = Some(1);
    show("mirror, serial branches", &StepTimeline::mirror(&p, 0.0, 0, &[6, 6, 4, 6]));
    show("vanilla", &StepTimeline::vanilla(&p, 0.0, 7));
}
