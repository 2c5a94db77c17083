# Chains, consensus and allocation contract
