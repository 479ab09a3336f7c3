@problemName Unknown
@flavour vanilla
@classLabel true 0 1
@data
1,2:0
