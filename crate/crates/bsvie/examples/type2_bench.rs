use bsvie::grid::{StoreSelect, TriangleGrid};
use bsvie::model::catalog_entry;
use bsvie::pde_type1::Type1Options;
use bsvie::pde_type2::{solve_type2, Type2Options};
use std::time::Instant;

fn main() {
    let e = catalog_entry("type2-unit-zeta").unwrap();
    let p = e.problem.type2().unwrap();
    let grid = TriangleGrid::uniform(1.0, 200, 8.0, 401).unwrap();
    let opts = Type2Options {
        t1: Type1Options {
            t_store: StoreSelect::Stride(16),
            s_store: StoreSelect::Stride(8),
        },
        ..Default::default()
    };
    let t0 = Instant::now();
    let sol = solve_type2(p, &grid, &opts).unwrap();
    println!(
        "type2 solve: {:.1} s, sweeps {}, diag(0, 0.5) = {:.6}",
        t0.elapsed().as_secs_f64(),
        sol.updates.len(),
        sol.theta.diag_value(0, 0.5, 0)
    );
}
