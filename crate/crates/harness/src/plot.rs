//! Gnuplot script emission. Plotting itself stays outside the tool; the
//! CSVs are the contract and this is a convenience wrapper around them.

use std::path::Path;

/// Builds a gnuplot script plotting sum_q and cumulative reward over
/// iterations for every given per-node CSV.
pub fn plot_script(csv_paths: &[impl AsRef<Path>], output_prefix: &str) -> String {
    let mut script = String::new();
    script.push_str("set datafile separator ','\n");
    script.push_str("set terminal pngcairo size 900,600\n");
    script.push_str("set key left top\n");
    script.push_str("set xlabel 'iteration'\n\n");

    let series = |column: usize, title: &str| -> String {
        csv_paths
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let path = p.as_ref().display();
                let sep = if i == 0 { "" } else { ", \\\n     " };
                format!("{sep}'{path}' using 2:{column} with lines title '{title} {}'", i + 1)
            })
            .collect()
    };

    script.push_str(&format!("set output '{output_prefix}_sum_q.png'\n"));
    script.push_str("set ylabel 'sum of Q-values'\n");
    script.push_str(&format!("plot {}\n\n", series(4, "node")));

    script.push_str(&format!("set output '{output_prefix}_cumulative_reward.png'\n"));
    script.push_str("set ylabel 'cumulative reward'\n");
    script.push_str(&format!("plot {}\n", series(5, "node")));
    script
}
