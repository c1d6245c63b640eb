#include "tra/cli.hpp"

int main(int argc, char** argv) {
  return tra::run_command(argc, argv);
}
