//! Architecture arithmetic for the three network variants: per-axis
//! receptive fields and exact learnable-parameter counts, derived from the
//! config alone.

use vertefract::network::{conv_param_count, NetworkConfig, Variant};

fn main() {
    println!(
        "{:<8} {:>14} {:>16} {:>12}",
        "variant", "normal rf", "subsampled rf", "parameters"
    );
    for variant in [Variant::OneSlice, Variant::FiveSlices, Variant::ThreeD] {
        let cfg = NetworkConfig::for_variant(variant);
        let rf = cfg.receptive_field();
        println!(
            "{:<8} {:>14} {:>16} {:>12}",
            variant.to_string(),
            format!("{:?}", rf.normal),
            format!("{:?}", rf.subsampled_effective),
            cfg.count_parameters()
        );
    }

    let budget = 230_000f64;
    let n3d = NetworkConfig::for_variant(Variant::ThreeD).count_parameters();
    println!(
        "\n3d plan sits {:.2}% from the 230K budget",
        (n3d as f64 - budget).abs() / budget * 100.0
    );
    println!(
        "a single 3x3x3 conv layer, 1 -> 1 channels, costs {} parameters",
        conv_param_count([3, 3, 3], 1, 1)
    );

    let spec = NetworkConfig::for_variant(Variant::ThreeD).segment_spec([9, 9, 9], [0, 0, 0]);
    println!(
        "a {:?} output patch needs a {:?} normal input and a {:?} coarse input",
        spec.output_dims, spec.input_dims, spec.input_subsampled_dims
    );
}
