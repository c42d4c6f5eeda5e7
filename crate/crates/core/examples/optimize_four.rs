use greensplit_core::{assemble_modes, optimize, output_map, scenarios, uniform_schedule, ModeSet, OptOptions};
use nalgebra::DVector;

fn main() -> greensplit_core::Result<()> {
    let spec = scenarios::four_intersections();
    let ms: ModeSet<f64> = assemble_modes(&spec, &uniform_schedule(&spec))?;
    let c = output_map::<f64>(&spec);
    let x0 = DVector::from_element(ms.n(), 1.0);
    let report = optimize(&ms, &c, &x0, &OptOptions::default())?;
    println!("cost {} with durations {:?}", report.cost, report.d_star);
    Ok(())
}
