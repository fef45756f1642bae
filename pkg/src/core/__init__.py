# Simulation core: converter, controllers, network, engine and diagnostics
