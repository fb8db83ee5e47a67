use anyhow::Result;
use clap::Parser;
use fokcp_cli::{execute, Cli};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = execute(cli, args)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
