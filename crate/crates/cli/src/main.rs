use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match weaver_cli::Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 2 on usage errors and 0 for --help / --version
        Err(e) => e.exit(),
    };
    let stdout = std::io::stdout();
    match weaver_cli::run(cli, &mut stdout.lock()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
