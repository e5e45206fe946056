//! The two-sample tests used to compare answer variance of correct and
//! incorrect predictions.

use taco::stats::{mann_whitney_u, mann_whitney_u_exact, mann_whitney_u_normal, point_biserial, welch_t};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let correct = [0.00, 0.09, 0.00, 0.16, 0.09, 0.00, 0.21, 0.00];
    let incorrect = [0.24, 0.21, 0.25, 0.16, 0.24, 0.09];

    let w = welch_t(&correct, &incorrect)?;
    println!(
        "welch t = {:.3}, df = {:.2}, p = {:.4}",
        w.statistic,
        w.degrees_of_freedom.unwrap_or(f64::NAN),
        w.p_value
    );
    let exact = mann_whitney_u_exact(&correct, &incorrect)?;
    let normal = mann_whitney_u_normal(&correct, &incorrect)?;
    println!(
        "mann-whitney U = {}, exact p = {:.4}, normal p = {:.4}",
        exact.statistic, exact.p_value, normal.p_value
    );
    let auto = mann_whitney_u(&correct, &incorrect)?;
    println!("default picks exact: {:?}", auto.exact);

    let mut flags = vec![true; correct.len()];
    flags.extend(vec![false; incorrect.len()]);
    let values: Vec<f64> = correct.iter().chain(&incorrect).copied().collect();
    let r = point_biserial(&flags, &values)?;
    println!("point-biserial r = {:.3}, p = {:.4}", r.statistic, r.p_value);
    Ok(())
}
