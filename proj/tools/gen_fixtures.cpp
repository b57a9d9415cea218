// Regenerates the scenario fixtures shipped under fixtures/. The builders
// are deterministic, so the files only change when the builders do.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pwashield/scenario.hpp"

using namespace pwashield;

int main(int argc, char** argv) {
    const std::filesystem::path out_dir = argc > 1 ? argv[1] : "fixtures";
    std::filesystem::create_directories(out_dir);

    corridor_scenario(0.03, 0.1, 20).save((out_dir / "corridor.json").string());

    DataDrivenParams dd;
    dd.n = 2580;
    dd.gamma_tilde = 0.2;
    dd.dataset_seed = 9001;
    corridor_scenario_data_driven(0.03, 0.5, 20, dd)
        .save((out_dir / "corridor_data_driven.json").string());

    const Scenario course = obstacle_course_scenario();
    course.save((out_dir / "obstacle_course.json").string());

    // standalone barrier file for the filter-step --barrier override
    {
        std::ofstream out(out_dir / "corridor_barrier.json");
        out << corridor_scenario(0.03, 0.1, 20).barrier.to_json().dump(2) << "\n";
    }

    std::cout << "fixtures written to " << out_dir << "\n";
    return 0;
}
