//! Model whole CNNs on the device: probe each primitive's cycle cost once,
//! scale by call counts, and compare datapath modes and DBC parallelism.

use rtcim::config::DeviceConfig;
use rtcim::cost::{map_workload, Mode, Network};

fn main() {
    let device = DeviceConfig::default();
    let nets = [Network::lenet5(), Network::alexnet(), Network::vgg16()];

    println!(
        "device: {} parallel DBCs, {} data domains",
        device.parallel_dbcs, device.geometry.data_domains
    );
    println!();
    println!(
        "{:<8} {:<8} {:>12} {:>10} {:>10} {:>12}",
        "network", "mode", "fps", "gflops", "power_w", "fps_per_w"
    );
    for net in &nets {
        for mode in Mode::ALL {
            let r = map_workload(net, mode, device.parallel_dbcs, &device.params).unwrap();
            println!(
                "{:<8} {:<8} {:>12.1} {:>10.2} {:>10.4} {:>12.0}",
                r.network, r.mode, r.fps, r.gflops, r.power_w, r.efficiency_fps_per_w
            );
        }
    }

    // Ledgers are data-independent, so throughput scales exactly with the
    // number of clusters working in parallel while energy per frame stays
    // put.
    println!();
    let net = Network::lenet5();
    for dbcs in [1u32, 12, 24, 64] {
        let r = map_workload(&net, Mode::Ternary, dbcs, &device.params).unwrap();
        println!(
            "lenet5 ternary on {dbcs:>2} DBCs: {:>10.1} fps, {:.3e} J/frame",
            r.fps, r.energy_j
        );
    }

    let total: u64 = Network::vgg16().total_flops();
    println!();
    println!("vgg16 counts {:.2} GFLOP per forward pass", total as f64 / 1e9);
}
