//! The step-latency law: mirror steps stay flat while draft work fits under
//! the target suffix, and pay only the two rendezvous over target-only time.

use mirror_sd::timing::{
    allreduce_cost, mirror_step_latency, target_comm_cost, time_saved_and_speedup, vanilla_step_latency,
    LatencyParams,
};

fn main() {
    let p = LatencyParams::unit_layers(8, 4, 0.1);
    println!("T_target {} ms, Δ {} ms, T_rv {} ms", p.target_time(), p.overlap_budget(), p.rv_total());
    println!("{:>9} {:>9} {:>9} {:>9} {:>8}", "draft_gen", "mirror", "vanilla", "saved", "speedup");
    for i in 0..=16 {
        let dg = i as f64 * 0.5;
        let m = mirror_step_latency(&p, dg);
        let (saved, s) = time_saved_and_speedup(&p, dg);
        println!(
            "{dg:>9.2} {:>9.3} {:>9.3} {saved:>9.3} {s:>8.4}",
            m.total,
            vanilla_step_latency(&p, dg)
        );
    }

    println!("\nallreduce(3 words, 8 devices, α=1, β=2) = {}", allreduce_cost(3.0, 8, 1.0, 2.0));
    let comm = LatencyParams {
        hidden_target: 64,
        alpha: 0.01,
        beta: 0.001,
        ..LatencyParams::default()
    };
    println!("target collectives over 8 layers = {:.3} ms", target_comm_cost(&comm, 8));
}
