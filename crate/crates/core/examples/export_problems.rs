//! Writes the bundled case studies as problem JSON files.
//!
//! `cargo run -p bilinear-mpc --example export_problems -- problems/`

use std::path::PathBuf;

use bilinear_mpc::problem::ProblemFile;
use bilinear_mpc::sim::models::{building_model, motor_model, MOTOR_DT};
use bilinear_mpc::sim::weather::bundled_winter_day;
use bilinear_mpc::Problem;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "problems".into()));
    std::fs::create_dir_all(&dir)?;
    let weather = bundled_winter_day()?;
    let building: Problem = building_model();
    let building = building.with_disturbance(weather.window(40, building.horizon))?;
    let motor: Problem = motor_model(MOTOR_DT, 18.0);
    for (name, p) in [("building.json", building), ("motor.json", motor)] {
        let text = serde_json::to_string_pretty(&ProblemFile::from_problem(&p))?;
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}
