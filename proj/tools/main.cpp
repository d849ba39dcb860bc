#include "cli.hpp"

int main(int argc, char** argv) {
  kamim::retain_freed_memory();
  return kamim::cli::run(argc, argv);
}
