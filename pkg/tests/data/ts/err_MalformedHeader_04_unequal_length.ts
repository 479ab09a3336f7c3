@problemName Unequal
@equalLength false
@classLabel true 0 1
@data
1,2:0
