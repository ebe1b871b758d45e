//! Writes the bundled fixtures: `write_fixtures [DIR]` (default `fixtures`).

fn main() -> anyhow::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    synth_eval_cli::bundled::write_all(std::path::Path::new(&dir))?;
    println!("wrote fixtures to {dir}");
    Ok(())
}
