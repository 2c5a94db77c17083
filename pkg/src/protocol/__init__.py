# Protocol phases
