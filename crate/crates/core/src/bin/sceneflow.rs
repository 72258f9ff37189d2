fn main() {
    std::process::exit(sceneflow::cli::main());
}
