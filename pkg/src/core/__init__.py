# Core runtime: simulator, config, logging, metrics
