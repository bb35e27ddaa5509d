fn main() {
    std::process::exit(bedmesh::cli::main_with_args(std::env::args_os()));
}
