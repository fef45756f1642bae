# Grid-forming converter simulator
