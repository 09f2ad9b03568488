use clap::Parser;

fn main() {
    let cli = linetime_cli::args::Cli::parse();
    let code = linetime_cli::run(cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
