fn main() {
    std::process::exit(masscade::pipeline::main_with_args(std::env::args_os()));
}
